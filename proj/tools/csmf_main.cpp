#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "csmf/app.hpp"
#include "csmf/errors.hpp"

namespace {

// Quote a CLI-provided string so the override layer always sees a JSON string.
std::string quoted_set(const std::string& path, const std::string& value) {
    return path + "=" + nlohmann::json(value).dump();
}

csmf::ServingWeights weights_from(const std::vector<double>& w) {
    if (w.size() != 3)
        throw csmf::ConfigError("--weights expects three comma-separated numbers");
    return csmf::ServingWeights{w[0], w[1], w[2]};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded multi-objective two-tower retrieval"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::string data_dir, out_dir;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run-config file");
        cmd->add_option("--set", sets, "Override one setting: dotted.path=value");
        cmd->add_option("--data", data_dir, "Override paths.data_dir");
        cmd->add_option("--out", out_dir, "Override paths.out_dir");
    };

    CLI::App* cmd_gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    add_common(cmd_gen);

    CLI::App* cmd_train = app.add_subcommand("train", "Run the configured training lifecycle");
    add_common(cmd_train);
    std::string mode, resume_path;
    cmd_train->add_option("--mode", mode, "Shorthand for --set training.mode=...");
    cmd_train->add_option("--resume", resume_path, "Continue from a stage-boundary checkpoint");

    CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(cmd_eval);
    std::string ckpt_path;
    cmd_eval->add_option("--checkpoint", ckpt_path, "Checkpoint file (default <out>/checkpoint.bin)");

    CLI::App* cmd_export = app.add_subcommand("export", "Write serving vector files");
    add_common(cmd_export);
    cmd_export->add_option("--checkpoint", ckpt_path);

    CLI::App* cmd_retrieve = app.add_subcommand("retrieve", "Top-k fused retrieval for one user");
    add_common(cmd_retrieve);
    std::int64_t user_id = 0;
    std::size_t k = 10;
    std::vector<double> weight_list;
    std::string vectors_dir;
    bool bench = false;
    std::size_t repeats = 3;
    cmd_retrieve->add_option("--user-id", user_id, "User to retrieve for")->required();
    cmd_retrieve->add_option("--k", k, "Result count");
    cmd_retrieve->add_option("--weights", weight_list, "k_d,k_o,k_r fusion weights")
        ->delimiter(',');
    cmd_retrieve->add_option("--vectors", vectors_dir, "Read exported vector files from this dir");
    cmd_retrieve->add_option("--checkpoint", ckpt_path);
    cmd_retrieve->add_flag("--bench", bench, "Time the exact scan instead of printing results");
    cmd_retrieve->add_option("--repeats", repeats, "Scan repetitions for --bench");

    CLI::App* cmd_sweep = app.add_subcommand("sweep", "Grid sweeps over one config");
    add_common(cmd_sweep);
    std::string param = "weights";
    std::vector<double> values;
    std::vector<double> click_weights{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    std::vector<double> conversion_weights{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    cmd_sweep->add_option("--param", param, "weights | prune_value | conflict_gain");
    cmd_sweep->add_option("--values", values, "Values for retraining sweeps")->delimiter(',');
    cmd_sweep->add_option("--click-weights", click_weights, "k_o grid for --param weights")
        ->delimiter(',');
    cmd_sweep
        ->add_option("--conversion-weights", conversion_weights, "k_r grid for --param weights")
        ->delimiter(',');
    cmd_sweep->add_option("--checkpoint", ckpt_path);

    CLI::App* cmd_print = app.add_subcommand("print-config", "Print the resolved config document");
    add_common(cmd_print);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    csmf::RunConfig config;
    try {
        if (!data_dir.empty()) sets.push_back(quoted_set("paths.data_dir", data_dir));
        if (!out_dir.empty()) sets.push_back(quoted_set("paths.out_dir", out_dir));
        if (!mode.empty()) sets.push_back(quoted_set("training.mode", mode));
        config = csmf::build_run_config(config_path, sets);
    } catch (const csmf::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(cmd_gen)) {
            std::cout << csmf::gen_data(config);
        } else if (app.got_subcommand(cmd_train)) {
            std::cout << csmf::train(config, resume_path);
        } else if (app.got_subcommand(cmd_eval)) {
            std::cout << csmf::eval_report(config, ckpt_path);
        } else if (app.got_subcommand(cmd_export)) {
            std::cout << csmf::export_vectors(config, ckpt_path);
        } else if (app.got_subcommand(cmd_retrieve)) {
            if (bench) {
                std::cout << csmf::bench_report(config, repeats, ckpt_path);
            } else {
                const csmf::ServingWeights w =
                    weight_list.empty() ? config.weights : weights_from(weight_list);
                std::cout << csmf::retrieval_text(
                    csmf::retrieve(config, user_id, k, w, vectors_dir, ckpt_path));
            }
        } else if (app.got_subcommand(cmd_sweep)) {
            if (param == "weights") {
                std::cout << csmf::sweep_weights(config, click_weights, conversion_weights,
                                                 ckpt_path);
            } else if (param == "prune_value") {
                std::cout << csmf::sweep_prune_value(config, values);
            } else if (param == "conflict_gain") {
                std::cout << csmf::sweep_conflict_gain(config, values);
            } else {
                throw csmf::ConfigError("unknown sweep parameter \"" + param + "\"");
            }
        } else if (app.got_subcommand(cmd_print)) {
            std::cout << config.to_json();
        }
    } catch (const csmf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const csmf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
