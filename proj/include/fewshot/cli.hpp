#pragma once

namespace fewshot::cli {

/// Entry point behind the fewshot executable. Returns the process exit code:
/// 0 on success, 2 for bad input (config, data, files), 1 otherwise.
int run(int argc, char** argv);

}  // namespace fewshot::cli
