// kbca: command-line front end for the knowledge-aware Bayesian co-attention
// library. Subcommands: gen-data, train, eval, ablate, selfcheck.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 numerical failure.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "kbca/selfcheck.hpp"
#include "kbca/synthetic.hpp"
#include "kbca/train.hpp"

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw kbca::ConfigError("cannot open config file " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw kbca::ConfigError("config file " + path + ": " + e.what());
    }
}

struct CommonOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<std::string> prior_source;
    std::optional<double> kl_weight;
    std::optional<std::string> modality;
    std::optional<double> lr;
    std::optional<std::size_t> max_epochs;

    void apply(kbca::ModelConfig& cfg) const {
        if (seed) cfg.seed = *seed;
        if (variant) cfg.variant = kbca::variant_from_string(*variant);
        if (prior_source) cfg.prior_source = kbca::prior_source_from_string(*prior_source);
        if (kl_weight) cfg.kl_weight = *kl_weight;
        if (modality) cfg.modality = kbca::modality_from_string(*modality);
        if (lr) cfg.lr = *lr;
        if (max_epochs) cfg.max_epochs = *max_epochs;
        cfg.validate();
    }
};

kbca::ModelConfig load_model_config(const std::string& config_path, const CommonOverrides& ov) {
    kbca::ModelConfig cfg;
    if (!config_path.empty()) cfg = read_json_file(config_path).get<kbca::ModelConfig>();
    ov.apply(cfg);
    return cfg;
}

void print_metrics(const kbca::Metrics& m, const std::string& tag) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s ua %.4f  wa %.4f", tag.c_str(), m.ua, m.wa);
    std::cout << buf << '\n';
    for (std::size_t c = 0; c < m.recalls.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%s recall[%zu] %.4f", tag.c_str(), c, m.recalls[c]);
        std::cout << buf << '\n';
    }
    for (const auto& w : m.warnings) std::cout << tag << " warning: " << w << '\n';
}

int run(int argc, char** argv) {
    CLI::App app{"knowledge-aware Bayesian co-attention emotion classifier"};
    app.require_subcommand(1);

    CommonOverrides ov;
    std::string config_path, out_path, data_dir, model_path, lexicon_path, split_name = "test";
    std::size_t repeats = 5, jobs = 1;

    auto add_common = [&](CLI::App* cmd, bool model_flags) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", ov.seed, "Override the RNG seed");
        cmd->add_option("--out", out_path, "Output path");
        if (model_flags) {
            cmd->add_option("--variant", ov.variant, "Attention variant: det|bam");
            cmd->add_option("--prior-source", ov.prior_source,
                            "Gamma prior source: knowledge|key|uniform");
            cmd->add_option("--kl-weight", ov.kl_weight, "Weight of the KL term in the loss");
            cmd->add_option("--modality", ov.modality, "Input modalities: both|text|speech");
            cmd->add_option("--lr", ov.lr, "Override the learning rate");
            cmd->add_option("--max-epochs", ov.max_epochs, "Override the epoch budget");
        }
    };

    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
    add_common(gen, false);
    gen->get_option("--out")->required();

    CLI::App* train = app.add_subcommand("train", "Train a model and save a checkpoint");
    add_common(train, true);
    train->add_option("--data", data_dir, "Dataset directory")->required();
    train->add_option("--lexicon", lexicon_path, "Lexicon TSV (default: <data>/lexicon.tsv)");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    add_common(eval, false);
    eval->add_option("--data", data_dir, "Dataset directory")->required();
    eval->add_option("--model", model_path, "Checkpoint file")->required();
    eval->add_option("--lexicon", lexicon_path, "Lexicon TSV (default: <data>/lexicon.tsv)");
    eval->add_option("--split", split_name, "Split to evaluate: train|val|test|all");

    CLI::App* ablate = app.add_subcommand("ablate", "Run the fixed ablation grid");
    add_common(ablate, true);
    ablate->add_option("--data", data_dir, "Dataset directory")->required();
    ablate->add_option("--lexicon", lexicon_path, "Lexicon TSV (default: <data>/lexicon.tsv)");
    ablate->add_option("--repeats", repeats, "Seeds per configuration");
    ablate->add_option("--jobs", jobs, "Parallel training jobs");

    CLI::App* selfcheck = app.add_subcommand("selfcheck", "Run built-in numerical checks");
    (void)selfcheck;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (*gen) {
        kbca::SyntheticSpec spec;
        if (!config_path.empty()) spec = read_json_file(config_path).get<kbca::SyntheticSpec>();
        if (ov.seed) spec.seed = *ov.seed;
        spec.validate();
        kbca::gen_synthetic(spec, out_path);
        std::cout << "wrote " << spec.n_items << " items (" << spec.n_classes << " classes, d="
                  << spec.d << ") to " << out_path << '\n';
        return 0;
    }

    if (*selfcheck) {
        kbca::SelfcheckReport report = kbca::run_selfcheck();
        std::cout << kbca::format_selfcheck(report);
        return report.all_passed() ? 0 : 3;
    }

    // Remaining subcommands all consume a dataset directory.
    if (lexicon_path.empty()) lexicon_path = data_dir + "/lexicon.tsv";
    std::vector<std::string> lex_warnings;
    kbca::LexiconTable lex = kbca::load_lexicon(lexicon_path, &lex_warnings);
    for (const auto& w : lex_warnings) std::cerr << w << '\n';
    kbca::SplitDataset split = kbca::split_dataset(kbca::load_dataset(data_dir));
    std::cout << "dataset: " << split.train.items.size() << " train / " << split.val.items.size()
              << " val / " << split.test.items.size() << " test\n";

    if (*train) {
        kbca::ModelConfig cfg = load_model_config(config_path, ov);
        kbca::EmotionModel model(cfg);
        model.init(kbca::Rng(cfg.seed, 0x696e));
        kbca::TrainReport report = kbca::train_model(model, split.train, split.val, lex, &std::cout);
        char buf[160];
        std::snprintf(buf, sizeof buf, "best epoch %zu  val_ua %.4f  val_wa %.4f%s",
                      report.best_epoch, report.best_val_ua, report.best_val_wa,
                      report.early_stopped ? "  (early stop)" : "");
        std::cout << buf << '\n';
        kbca::EvalResult test = kbca::evaluate_model(model, split.test, lex);
        print_metrics(test.metrics, "test");
        if (!out_path.empty()) {
            kbca::save_checkpoint(out_path, cfg, model.params);
            std::cout << "saved checkpoint to " << out_path << '\n';
        }
        return 0;
    }

    if (*eval) {
        kbca::EmotionModel model = kbca::load_model(model_path);
        auto eval_one = [&](const kbca::Dataset& ds, const std::string& tag) {
            kbca::EvalResult res = kbca::evaluate_model(model, ds, lex);
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s mean_loss %.6f", tag.c_str(), res.mean_loss);
            std::cout << buf << '\n';
            print_metrics(res.metrics, tag);
        };
        if (split_name == "all") {
            eval_one(split.train, "train");
            eval_one(split.val, "val");
            eval_one(split.test, "test");
        } else if (split_name == "train") {
            eval_one(split.train, "train");
        } else if (split_name == "val") {
            eval_one(split.val, "val");
        } else if (split_name == "test") {
            eval_one(split.test, "test");
        } else {
            throw kbca::ConfigError("unknown split '" + split_name + "'");
        }
        return 0;
    }

    if (*ablate) {
        kbca::ModelConfig base = load_model_config(config_path, ov);
        auto grid = kbca::default_ablation_grid(base);
        auto rows = kbca::run_ablation(grid, split, lex, repeats, jobs);
        std::cout << kbca::ablation_table(rows);
        if (!out_path.empty()) {
            std::ofstream os(out_path);
            if (!os) throw kbca::DataError("cannot open " + out_path);
            os << kbca::ablation_csv(rows);
            std::cout << "saved csv to " << out_path << '\n';
        }
        return 0;
    }

    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const kbca::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const kbca::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const kbca::Error& e) {
        // parse/data/shape problems all trace back to the inputs
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
