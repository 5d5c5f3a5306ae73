#include "fewshot/cli.hpp"

#include "fewshot/episodes.hpp"
#include "fewshot/label_adapter.hpp"
#include "fewshot/protonet.hpp"
#include "fewshot/qda.hpp"
#include "fewshot/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fewshot::cli {
namespace {

namespace fs = std::filesystem;
using trainer::json;

struct Args {
    std::string config_path;
    std::string out_dir = ".";
    std::string checkpoint_path;
    std::string data_path;
    std::string counts;
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<std::string> overrides;
};

int exit_code(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::load:
        case ErrorKind::format:
        case ErrorKind::empty_sequence:
        case ErrorKind::label_embedding:
        case ErrorKind::split:
        case ErrorKind::config:
        case ErrorKind::io:
            return 2;
        default:
            return 1;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cli", "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "cli", "failed writing " + path.string());
}

fs::path prepare_out(const Args& a) {
    std::error_code ec;
    fs::create_directories(a.out_dir, ec);
    if (ec) throw Error(ErrorKind::io, "cli", "cannot create output directory " + a.out_dir + ": " + ec.message());
    return fs::path(a.out_dir);
}

trainer::TrainConfig resolve_config(const Args& a, const trainer::TrainConfig* fallback = nullptr) {
    trainer::TrainConfig base;
    if (!a.config_path.empty()) {
        if (!fs::exists(a.config_path)) {
            throw Error(ErrorKind::io, "cli", "config file not found: " + a.config_path);
        }
        base = trainer::load_config(a.config_path);
    } else if (fallback != nullptr) {
        base = *fallback;
    }
    return trainer::apply_overrides(base, a.overrides);
}

void check_data_files(const trainer::TrainConfig& c) {
    if (c.data.source != "corpus") return;
    for (const auto* p : {&c.data.data_path, &c.data.split_path, &c.data.word_vectors}) {
        if (!p->empty() && !fs::exists(*p)) throw Error(ErrorKind::io, "cli", "data file not found: " + *p);
    }
}

trainer::Sources sources_for(const trainer::TrainConfig& c) {
    check_data_files(c);
    std::vector<std::string> warnings;
    auto s = trainer::make_sources(c, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    return s;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

int run_train(const Args& a) {
    const auto config = resolve_config(a);
    const auto sources = sources_for(config);
    const auto out = prepare_out(a);
    trainer::TrainHooks hooks;
    hooks.on_abort = [&](const trainer::Checkpoint& partial) {
        trainer::save_checkpoint(partial, (out / "checkpoint.partial.json").string());
        std::cerr << "training aborted; partial checkpoint written to " << (out / "checkpoint.partial.json").string()
                  << "\n";
    };
    const auto result = trainer::train(config, sources, hooks, a.threads);
    trainer::save_checkpoint(result.checkpoint, (out / "checkpoint.json").string());
    write_text(out / "report.json", dump(trainer::report_to_json(result.report)));
    std::cout << trainer::format_report_table(result.report);
    return 0;
}

int run_eval(const Args& a) {
    if (a.checkpoint_path.empty()) throw Error(ErrorKind::config, "cli", "eval needs --checkpoint");
    const auto ck = trainer::load_checkpoint(a.checkpoint_path);
    const auto config = resolve_config(a, &ck.config);
    const auto sources = sources_for(config);
    const auto out = prepare_out(a);
    const auto report = trainer::evaluate(ck, *sources.test, config, {a.threads});
    write_text(out / "report.json", dump(trainer::report_to_json(report)));
    std::cout << trainer::format_report_table(report);
    return 0;
}

int run_ablate(const Args& a) {
    const auto base = resolve_config(a);
    const auto sources = sources_for(base);
    const auto out = prepare_out(a);

    struct Variant {
        const char* name;
        bool bypass_adapter;
        bool bypass_qda;
    };
    const Variant variants[] = {
        {"full", false, false},
        {"la-only", false, true},
        {"qda-only", true, false},
        {"pn", true, true},
    };
    json rows = json::array();
    std::ostringstream table;
    table << std::fixed << std::setprecision(4);
    table << std::left << std::setw(10) << "variant" << std::right << std::setw(10) << "accuracy" << std::setw(10)
          << "ci95" << std::setw(10) << "val_acc" << "\n";
    for (const auto& v : variants) {
        auto config = base;
        config.bypass_adapter = v.bypass_adapter;
        config.bypass_qda = v.bypass_qda;
        std::cerr << "running " << v.name << "\n";
        const auto result = trainer::train(config, sources, {}, a.threads);
        json row;
        row["variant"] = v.name;
        row["bypass_adapter"] = v.bypass_adapter;
        row["bypass_qda"] = v.bypass_qda;
        row["report"] = trainer::report_to_json(result.report);
        rows.push_back(std::move(row));
        table << std::left << std::setw(10) << v.name << std::right << std::setw(10) << result.report.test_acc_mean
              << std::setw(10) << result.report.test_acc_ci95 << std::setw(10) << result.report.best_val_acc << "\n";
    }
    json doc;
    doc["config"] = trainer::config_to_json(base);
    doc["variants"] = std::move(rows);
    write_text(out / "ablation.json", dump(doc));
    std::cout << table.str();
    return 0;
}

json rep_row(const std::string& id, const std::string& label, const Vector& rep, const char* kind) {
    json row;
    row["id"] = id;
    row["label"] = label;
    row["rep"] = std::vector<double>(rep.data(), rep.data() + rep.size());
    row["kind"] = kind;
    return row;
}

int run_dump_reps(const Args& a) {
    if (a.checkpoint_path.empty()) throw Error(ErrorKind::config, "cli", "dump-reps needs --checkpoint");
    const auto ck = trainer::load_checkpoint(a.checkpoint_path);
    const auto config = resolve_config(a, &ck.config);
    const auto sources = sources_for(config);
    const auto out = prepare_out(a);

    const auto episode = sources.test->sample(derive_seed(config.seed, "dump-reps"));
    adapter::RepresentOptions opts;
    opts.bypass = config.bypass_adapter;
    if (!opts.bypass && ck.params.dim() != episode.dim()) {
        throw Error(ErrorKind::consistency, "cli", "checkpoint dim does not match data dim");
    }
    const auto reps = adapter::represent_episode(opts.bypass ? nullptr : &ck.params, episode, opts);
    const auto plain = protonet::support_mean_prototypes(reps.support, episode.classes);
    const auto augmented = qda::estimate_prototypes(reps.support, reps.query, config.qda_enabled() ? config.r : 0,
                                                    config.ot_settings(), episode.classes);

    std::string text;
    const auto emit = [&](const json& row) { text += row.dump() + "\n"; };
    for (std::size_t c = 0; c < episode.support.size(); ++c) {
        for (std::size_t j = 0; j < episode.support[c].size(); ++j) {
            const auto& s = *episode.support[c][j];
            emit(rep_row(s.source_id, s.label, reps.support[c].row(static_cast<Eigen::Index>(j)).transpose(),
                         "sample"));
        }
    }
    for (std::size_t i = 0; i < episode.query.size(); ++i) {
        const auto& s = *episode.query[i];
        emit(rep_row(s.source_id, s.label, reps.query.row(static_cast<Eigen::Index>(i)).transpose(), "sample"));
    }
    for (std::size_t c = 0; c < episode.classes.size(); ++c) {
        const auto row = static_cast<Eigen::Index>(c);
        emit(rep_row("support_prototype:" + episode.classes[c], episode.classes[c],
                     plain.prototypes.row(row).transpose(), "support_prototype"));
    }
    for (std::size_t c = 0; c < episode.classes.size(); ++c) {
        const auto row = static_cast<Eigen::Index>(c);
        emit(rep_row("qda_prototype:" + episode.classes[c], episode.classes[c],
                     augmented.prototypes.prototypes.row(row).transpose(), "qda_prototype"));
    }
    write_text(out / "reps.jsonl", text);
    std::cout << "wrote " << (out / "reps.jsonl").string() << "\n";
    return 0;
}

int run_make_splits(const Args& a) {
    if (a.data_path.empty()) throw Error(ErrorKind::config, "cli", "make-splits needs --data");
    if (!fs::exists(a.data_path)) throw Error(ErrorKind::io, "cli", "data file not found: " + a.data_path);
    int n[3] = {0, 0, 0};
    {
        std::istringstream in(a.counts);
        std::string part;
        int i = 0;
        while (std::getline(in, part, '/')) {
            if (i >= 3) throw Error(ErrorKind::config, "cli", "--counts must be train/valid/test");
            try {
                std::size_t used = 0;
                n[i] = std::stoi(part, &used);
                if (used != part.size() || n[i] < 0) throw std::invalid_argument(part);
            } catch (const std::exception&) {
                throw Error(ErrorKind::config, "cli", "bad count '" + part + "' in --counts");
            }
            ++i;
        }
        if (i != 3) throw Error(ErrorKind::config, "cli", "--counts must be train/valid/test, e.g. 20/5/16");
    }
    const auto lists = episodes::make_splits(a.data_path, n[0], n[1], n[2], a.seed);
    const auto out = prepare_out(a);
    write_text(out / "split.json", episodes::split_to_json(lists));
    std::cout << "wrote " << (out / "split.json").string() << "\n";
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Few-shot text classification with label-adapted representations and OT query augmentation"};
    app.require_subcommand(1);
    Args args;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON config file");
        sub->add_option("--out", args.out_dir, "Output directory")->capture_default_str();
        sub->add_option("--threads", args.threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);
        sub->add_option("overrides", args.overrides, "key=value config overrides (dotted keys)");
    };
    auto* train = app.add_subcommand("train", "Train and evaluate; writes checkpoint.json and report.json");
    add_common(train);
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on test episodes; writes report.json");
    add_common(eval);
    eval->add_option("--checkpoint", args.checkpoint_path, "Checkpoint JSON")->required();
    auto* ablate = app.add_subcommand("ablate", "Train the four pipeline variants; writes ablation.json");
    add_common(ablate);
    auto* dump_reps = app.add_subcommand("dump-reps", "Write sample and prototype representations to reps.jsonl");
    add_common(dump_reps);
    dump_reps->add_option("--checkpoint", args.checkpoint_path, "Checkpoint JSON")->required();
    auto* splits = app.add_subcommand("make-splits", "Partition dataset labels; writes split.json");
    splits->add_option("--data", args.data_path, "Dataset JSONL")->required();
    splits->add_option("--counts", args.counts, "train/valid/test class counts, e.g. 20/5/16")->required();
    splits->add_option("--seed", args.seed, "Shuffle seed");
    splits->add_option("--out", args.out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return run_train(args);
        if (*eval) return run_eval(args);
        if (*ablate) return run_ablate(args);
        if (*dump_reps) return run_dump_reps(args);
        if (*splits) return run_make_splits(args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace fewshot::cli
