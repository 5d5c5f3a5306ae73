import os
import sys

# Under ctest, test the module built in the CMake tree even if an editable
# install is present (its import hook would otherwise win over sys.path).
_stage = os.environ.get("FEWSHOT_EXPECT_MODULE_DIR")
if _stage:
    sys.meta_path[:] = [f for f in sys.meta_path if "ScikitBuild" not in type(f).__name__]
    sys.path.insert(0, os.path.dirname(_stage))
