// skinnet command-line entry point: train / eval / predict / split / selftest.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <fstream>
#include <iostream>
#include <optional>

#include "skinnet/checkpoint.hpp"
#include "skinnet/selftest.hpp"
#include "skinnet/trainer.hpp"

namespace {

struct Flags {
    std::string config;
    std::string data_dir;
    std::string out_dir;
    int synthetic = 0;
    int fold = -1;
    int folds = 5;
    std::uint64_t seed = 0;
    int img_size = 64;
    int epochs = 100;
    int base_growth = 8;
    int depth = 4;
    int batch_size = 8;
    double lr = 1e-4;
    std::string normalization;
    bool no_augment = false;
    std::string checkpoint;
    std::string image;
    std::string output;
    std::string mode = "grad";
    int cases = 20;
};

bool given(const CLI::App* app, const char* name) {
    const CLI::Option* opt = app->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

// Defaults <- --config file <- explicit flags.
skinnet::TrainConfig resolve_config(const CLI::App* app, const Flags& f) {
    skinnet::TrainConfig c = f.config.empty() ? skinnet::TrainConfig{} : skinnet::load_config(f.config);
    if (given(app, "--data-dir")) c.data_dir = f.data_dir;
    if (given(app, "--out-dir")) c.out_dir = f.out_dir;
    if (given(app, "--synthetic")) c.synthetic = f.synthetic;
    if (given(app, "--fold")) c.fold = f.fold;
    if (given(app, "--folds")) c.folds = f.folds;
    if (given(app, "--seed")) c.seed = f.seed;
    if (given(app, "--img-size")) c.img_size = f.img_size;
    if (given(app, "--epochs")) c.epochs = f.epochs;
    if (given(app, "--base-growth")) c.base_growth = f.base_growth;
    if (given(app, "--depth")) c.depth = f.depth;
    if (given(app, "--batch-size")) c.batch_size = f.batch_size;
    if (given(app, "--lr")) c.lr = f.lr;
    if (given(app, "--normalization")) c.normalization = skinnet::parse_normalization(f.normalization);
    if (f.no_augment) c.augment = false;
    return c;
}

void add_data_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Flat JSON config mirroring TrainConfig keys")->check(CLI::ExistingFile);
    cmd->add_option("--data-dir", f.data_dir, "Directory with <id>.png and <id>_segmentation.png pairs");
    cmd->add_option("--out-dir", f.out_dir, "Output directory");
    cmd->add_option("--synthetic", f.synthetic, "Use N generated samples instead of --data-dir");
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--img-size", f.img_size, "Square input size (divisible by 2^depth)");
}

int run_train(const CLI::App* cmd, const Flags& f) {
    const skinnet::TrainConfig config = resolve_config(cmd, f);
    const skinnet::TrainResult result = skinnet::train(config, std::cout);
    return result.any_aborted() ? 1 : 0;
}

int run_eval(const CLI::App* cmd, const Flags& f) {
    const skinnet::TrainConfig config = resolve_config(cmd, f);
    std::optional<skinnet::TrainConfig> expected;
    if (!f.config.empty() || given(cmd, "--img-size")) expected = config;

    std::vector<skinnet::Sample> raw;
    if (config.synthetic > 0)
        raw = skinnet::synthetic_dataset(static_cast<std::size_t>(config.synthetic),
                                         static_cast<std::size_t>(config.img_size), config.seed);
    else
        raw = skinnet::load_dataset(config.data_dir);

    const std::filesystem::path out_dir = given(cmd, "--out-dir") || !f.config.empty() ? config.out_dir : ".";
    const auto result = skinnet::evaluate_checkpoint(f.checkpoint, raw, out_dir, expected);
    fmt::print("id,{}\n", skinnet::kMetricCsvHeader);
    for (std::size_t i = 0; i < result.ids.size(); ++i)
        fmt::print("{},{}\n", result.ids[i], skinnet::to_csv_row(result.per_image[i]));
    fmt::print("mean,{}\n", skinnet::to_csv_row(result.aggregate));
    return 0;
}

int run_split(const CLI::App* cmd, const Flags& f) {
    const skinnet::TrainConfig config = resolve_config(cmd, f);
    std::vector<std::string> ids;
    if (config.synthetic > 0) {
        for (const auto& s : skinnet::synthetic_dataset(static_cast<std::size_t>(config.synthetic), 16, config.seed))
            ids.push_back(s.id);
    } else {
        for (const auto& s : skinnet::load_dataset(config.data_dir)) ids.push_back(s.id);
    }
    const auto split = skinnet::kfold_split(ids, config.folds, config.seed);
    std::string csv = "id,fold\n";
    for (std::size_t k = 0; k < split.folds.size(); ++k)
        for (const auto& id : split.folds[k]) csv += fmt::format("{},{}\n", id, k);
    if (given(cmd, "--out-dir")) {
        std::filesystem::create_directories(config.out_dir);
        std::ofstream(config.out_dir / "folds.csv") << csv;
    } else {
        std::cout << csv;
    }
    return 0;
}

int run_selftest(const Flags& f) {
    const auto results = f.mode == "grad" ? skinnet::selftest::run_grad_suite(f.cases, f.seed)
                                          : skinnet::selftest::run_oracle_suite(f.cases, f.seed);
    return skinnet::selftest::report(results, std::cout) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SkinNet: dense-block U-Net with a dilated bottleneck for skin lesion segmentation"};
    app.require_subcommand(1);
    Flags f;

    auto* train = app.add_subcommand("train", "Cross-validated training");
    add_data_flags(train, f);
    train->add_option("--epochs", f.epochs, "Epochs per fold");
    train->add_option("--fold", f.fold, "Train this fold only");
    train->add_option("--folds", f.folds, "Number of folds (1 = no hold-out)");
    train->add_option("--base-growth", f.base_growth, "Dense-block growth at level 0");
    train->add_option("--depth", f.depth, "Encoder levels");
    train->add_option("--batch-size", f.batch_size, "Batch size");
    train->add_option("--lr", f.lr, "Initial learning rate");
    train->add_option("--normalization", f.normalization, "standardize | minmax | none");
    train->add_flag("--no-augment", f.no_augment, "Disable augmentation");

    auto* eval = app.add_subcommand("eval", "Score a checkpoint against ground-truth masks");
    add_data_flags(eval, f);
    eval->add_option("--checkpoint", f.checkpoint, "Checkpoint (.sknt)")->required()->check(CLI::ExistingFile);

    auto* predict = app.add_subcommand("predict", "Write a lesion mask PNG for one image");
    predict->add_option("--checkpoint", f.checkpoint, "Checkpoint (.sknt)")->required()->check(CLI::ExistingFile);
    predict->add_option("--image", f.image, "Input RGB PNG")->required();
    predict->add_option("--output", f.output, "Output mask PNG")->required();

    auto* split = app.add_subcommand("split", "Print the k-fold assignment");
    add_data_flags(split, f);
    split->add_option("--folds", f.folds, "Number of folds");

    auto* selftest = app.add_subcommand("selftest", "Gradient check or oracle suite");
    selftest->add_option("mode", f.mode, "grad | oracle")->check(CLI::IsMember({"grad", "oracle"}));
    selftest->add_option("--cases", f.cases, "Random cases per check");
    selftest->add_option("--seed", f.seed, "Random seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(train, f);
        if (eval->parsed()) return run_eval(eval, f);
        if (predict->parsed()) {
            skinnet::predict(f.checkpoint, f.image, f.output);
            return 0;
        }
        if (split->parsed()) return run_split(split, f);
        if (selftest->parsed()) return run_selftest(f);
    } catch (const std::exception& e) {
        fmt::print(std::cerr, "error: {}\n", e.what());
        return 2;
    }
    return 0;
}
