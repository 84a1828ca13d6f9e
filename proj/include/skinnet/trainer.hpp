#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "skinnet/data.hpp"
#include "skinnet/network.hpp"
#include "skinnet/objective.hpp"

namespace skinnet {

/// Hyperparameters, paths and seeds for one run. Serialized as flat JSON
/// with the same key names.
struct TrainConfig {
    std::filesystem::path data_dir;
    std::filesystem::path out_dir = "runs";
    int synthetic = 0;  // > 0: generate this many synthetic samples instead of reading data_dir
    int img_size = 64;
    int base_growth = 8;
    int depth = 4;
    int batch_size = 8;
    int epochs = 100;
    double lr = 1e-4;
    int folds = 5;  // 1 trains on everything and validates on the training set
    int fold = -1;  // >= 0 runs that fold only
    std::uint64_t seed = 0;
    bool augment = true;
    AugmentationConfig augmentation;
    double plateau_factor = 0.5;
    int plateau_patience = 5;
    double min_lr = 1e-6;
    Normalization normalization = Normalization::standardize;

    ModelSpec model_spec() const;
    void validate() const;
};

TrainConfig config_from_json(const std::string& text, TrainConfig base = {});
std::string config_to_json(const TrainConfig& config);
TrainConfig load_config(const std::filesystem::path& path);

struct EpochRecord {
    int fold = 0;
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_dc = 0;
    double val_ji = 0;
    double lr = 0;
};

inline constexpr const char* kCurvesHeader = "fold,epoch,train_loss,val_loss,val_dc,val_ji,lr";
std::string to_csv_row(const EpochRecord& record);

struct FoldResult {
    int fold = 0;
    int best_epoch = -1;
    double best_val_loss = 0;
    double best_val_dc = 0;
    double best_val_ji = 0;
    std::filesystem::path checkpoint;
    bool aborted = false;
    std::string diagnostic;
};

struct TrainResult {
    std::vector<EpochRecord> records;
    std::vector<FoldResult> folds;
    double mean_best_dc = 0;
    double mean_best_ji = 0;
    bool any_aborted() const;
};

/// Loads (or synthesizes) the configured samples and preprocesses them.
std::vector<Sample> load_samples(const TrainConfig& config);

/// Cross-validated training. Writes curves.csv, summary.csv and
/// fold<i>_best.sknt (lowest validation loss) into config.out_dir.
TrainResult train(const TrainConfig& config, std::ostream& log);

struct Evaluation {
    double loss = 0;  // batch-size weighted mean Dice loss
    std::vector<MetricReport> per_image;
    MetricReport mean;
    std::vector<Mask> predictions;
};

/// Forward pass without a tape over preprocessed samples.
Evaluation evaluate_model(const Model<float>& model, std::span<const Sample> samples, int batch_size = 8);

/// Normalization recorded next to a checkpoint (standardize if absent).
Normalization checkpoint_normalization(const std::filesystem::path& checkpoint);

struct EvalResult {
    std::vector<std::string> ids;
    std::vector<MetricReport> per_image;
    MetricReport aggregate;
};

/// Preprocesses raw samples to the checkpoint's input size, scores them and
/// writes <out_dir>/eval.csv. Throws on an empty set or, when `expected` is
/// given, on an architecture mismatch with the checkpoint.
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const Sample> raw_samples,
                               const std::filesystem::path& out_dir,
                               const std::optional<TrainConfig>& expected = std::nullopt);

/// Predicts a lesion mask at the model's input size for one image.
Mask predict_mask(const Model<float>& model, const Image& image, Normalization mode);

/// Reads image_path, writes an 8-bit mask PNG (lesion 255) to out_path.
void predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
             const std::filesystem::path& out_path);

}  // namespace skinnet
