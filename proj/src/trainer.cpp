#include "skinnet/trainer.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "skinnet/checkpoint.hpp"
#include "skinnet/optim.hpp"

namespace skinnet {

namespace {

using json = nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& dst) {
    if (auto it = j.find(key); it != j.end()) dst = it->template get<T>();
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

ModelSpec TrainConfig::model_spec() const {
    ModelSpec spec;
    spec.depth = depth;
    spec.base_growth = base_growth;
    spec.input_size = img_size;
    return spec;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (folds < 1) throw std::invalid_argument("folds must be >= 1");
    if (fold >= folds) throw std::invalid_argument("fold index out of range");
    if (synthetic < 0) throw std::invalid_argument("synthetic must be >= 0");
    if (img_size < 16) throw std::invalid_argument("img_size must be >= 16");
    if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
    model_spec().validate();
    augmentation.validate();
}

TrainConfig config_from_json(const std::string& text, TrainConfig base) {
    static const char* const kKeys[] = {
        "data_dir", "out_dir", "synthetic", "img_size", "base_growth", "depth", "batch_size", "epochs",
        "lr", "folds", "fold", "seed", "augment", "rotation_deg", "hflip_prob", "vflip_prob",
        "color_shift", "translation", "scale_min", "scale_max", "plateau_factor", "plateau_patience",
        "min_lr", "normalization"};
    TrainConfig c = std::move(base);
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
        for (const auto& [key, value] : j.items())
            if (std::find_if(std::begin(kKeys), std::end(kKeys), [&](const char* k) { return key == k; }) == std::end(kKeys))
                throw std::invalid_argument("unknown config key '" + key + "'");
        if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
        if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
        read_key(j, "synthetic", c.synthetic);
        read_key(j, "img_size", c.img_size);
        read_key(j, "base_growth", c.base_growth);
        read_key(j, "depth", c.depth);
        read_key(j, "batch_size", c.batch_size);
        read_key(j, "epochs", c.epochs);
        read_key(j, "lr", c.lr);
        read_key(j, "folds", c.folds);
        read_key(j, "fold", c.fold);
        read_key(j, "seed", c.seed);
        read_key(j, "augment", c.augment);
        read_key(j, "rotation_deg", c.augmentation.rotation_deg);
        read_key(j, "hflip_prob", c.augmentation.hflip_prob);
        read_key(j, "vflip_prob", c.augmentation.vflip_prob);
        read_key(j, "color_shift", c.augmentation.color_shift);
        read_key(j, "translation", c.augmentation.translation);
        read_key(j, "scale_min", c.augmentation.scale_min);
        read_key(j, "scale_max", c.augmentation.scale_max);
        read_key(j, "plateau_factor", c.plateau_factor);
        read_key(j, "plateau_patience", c.plateau_patience);
        read_key(j, "min_lr", c.min_lr);
        if (j.contains("normalization")) c.normalization = parse_normalization(j["normalization"].get<std::string>());
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("malformed config: ") + e.what());
    }
    return c;
}

std::string config_to_json(const TrainConfig& c) {
    json j;
    j["data_dir"] = c.data_dir.string();
    j["out_dir"] = c.out_dir.string();
    j["synthetic"] = c.synthetic;
    j["img_size"] = c.img_size;
    j["base_growth"] = c.base_growth;
    j["depth"] = c.depth;
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["folds"] = c.folds;
    j["fold"] = c.fold;
    j["seed"] = c.seed;
    j["augment"] = c.augment;
    j["rotation_deg"] = c.augmentation.rotation_deg;
    j["hflip_prob"] = c.augmentation.hflip_prob;
    j["vflip_prob"] = c.augmentation.vflip_prob;
    j["color_shift"] = c.augmentation.color_shift;
    j["translation"] = c.augmentation.translation;
    j["scale_min"] = c.augmentation.scale_min;
    j["scale_max"] = c.augmentation.scale_max;
    j["plateau_factor"] = c.plateau_factor;
    j["plateau_patience"] = c.plateau_patience;
    j["min_lr"] = c.min_lr;
    j["normalization"] = std::string(to_string(c.normalization));
    return j.dump(2);
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config " + path.string());
    return config_from_json(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

std::string to_csv_row(const EpochRecord& r) {
    return fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6g}", r.fold, r.epoch, r.train_loss, r.val_loss, r.val_dc,
                       r.val_ji, r.lr);
}

bool TrainResult::any_aborted() const {
    return std::any_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.aborted; });
}

std::vector<Sample> load_samples(const TrainConfig& config) {
    std::vector<Sample> raw;
    if (config.synthetic > 0) {
        raw = synthetic_dataset(static_cast<std::size_t>(config.synthetic), static_cast<std::size_t>(config.img_size),
                                config.seed);
    } else {
        if (config.data_dir.empty()) throw std::invalid_argument("no data_dir given and synthetic data not requested");
        raw = load_dataset(config.data_dir);
    }
    std::vector<Sample> out;
    out.reserve(raw.size());
    for (const auto& s : raw) out.push_back(preprocess(s, static_cast<std::size_t>(config.img_size), config.normalization));
    return out;
}

Evaluation evaluate_model(const Model<float>& model, std::span<const Sample> samples, int batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate_model: no samples");
    Evaluation ev;
    double weighted_loss = 0;
    const auto step = static_cast<std::size_t>(std::max(batch_size, 1));
    for (std::size_t start = 0; start < samples.size(); start += step) {
        const auto batch = samples.subspan(start, std::min(step, samples.size() - start));
        const Tensor<float> probs = forward(model, image_batch<float>(batch));
        weighted_loss += static_cast<double>(dice_loss(target_batch<float>(batch), probs).item()) *
                         static_cast<double>(batch.size());
        auto masks = binarize(probs);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            ev.per_image.push_back(metrics(confusion(masks[i], batch[i].mask)));
            ev.predictions.push_back(std::move(masks[i]));
        }
    }
    ev.loss = weighted_loss / static_cast<double>(samples.size());
    ev.mean = mean_report(ev.per_image);
    return ev;
}

namespace {

std::string fold_name(int fold) {
    return "fold" + std::to_string(fold) + "_best.sknt";
}

std::string sidecar_extra(const TrainConfig& config) {
    json extra;
    extra["normalization"] = std::string(to_string(config.normalization));
    return extra.dump();
}

FoldResult train_fold(const TrainConfig& config, int fold, std::span<const Sample> train_set,
                      std::span<const Sample> val_set, std::vector<EpochRecord>& records, std::ostream& log) {
    FoldResult result;
    result.fold = fold;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    result.checkpoint = config.out_dir / fold_name(fold);

    Model<float> model = build_skinnet<float>(config.model_spec(), config.seed + static_cast<std::uint64_t>(fold));
    std::vector<Tensor<float>> params = model.parameter_list();
    AdamState<float> adam(params, AdamConfig{config.lr});
    PlateauSchedule schedule(config.lr, {config.plateau_factor, config.plateau_patience, config.min_lr});
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(fold), 1));

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch_size = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle(order, rng);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(start + batch_size, order.size());
            std::vector<Sample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const Sample& s = train_set[order[i]];
                batch.push_back(config.augment ? augment(s, config.augmentation, rng) : s);
            }
            Tape<float> tape;
            const Tensor<float> probs = forward(model, image_batch<float>(batch), &tape);
            const Tensor<float> loss = dice_loss(target_batch<float>(batch), probs, &tape);
            if (!std::isfinite(loss.item())) {
                result.aborted = true;
                result.diagnostic = fmt::format("fold {} epoch {}: non-finite training loss", fold, epoch);
                fmt::print(log, "error: {}\n", result.diagnostic);
                return result;
            }
            model.zero_grad();
            tape.backward(loss);
            adam_step<float>(params, adam);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
        }

        const Evaluation val = evaluate_model(model, val_set, config.batch_size);
        EpochRecord rec{fold, epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.mean.dc, val.mean.ji,
                        adam.lr()};
        if (!std::isfinite(rec.val_loss)) {
            result.aborted = true;
            result.diagnostic = fmt::format("fold {} epoch {}: non-finite validation loss", fold, epoch);
            fmt::print(log, "error: {}\n", result.diagnostic);
            return result;
        }
        records.push_back(rec);
        fmt::print(log, "{}\n", to_csv_row(rec));

        if (rec.val_loss < result.best_val_loss) {
            result.best_val_loss = rec.val_loss;
            result.best_val_dc = rec.val_dc;
            result.best_val_ji = rec.val_ji;
            result.best_epoch = epoch;
            save_checkpoint(result.checkpoint, model, sidecar_extra(config));
        }
        adam.set_lr(schedule.update(rec.val_loss));
    }
    return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::ostream& log) {
    config.validate();
    const std::vector<Sample> samples = load_samples(config);
    if (samples.empty()) throw std::invalid_argument("dataset is empty");
    std::filesystem::create_directories(config.out_dir);
    {
        auto out = open_output(config.out_dir / "config.json");
        out << config_to_json(config) << "\n";
    }

    // Fold membership by id; folds == 1 trains and validates on everything.
    std::vector<std::vector<std::size_t>> fold_members;
    if (config.folds == 1) {
        fold_members.emplace_back(samples.size());
        std::iota(fold_members[0].begin(), fold_members[0].end(), std::size_t{0});
    } else {
        if (samples.size() < static_cast<std::size_t>(config.folds))
            throw std::invalid_argument(fmt::format("dataset of {} samples is too small for {} folds", samples.size(),
                                                    config.folds));
        std::vector<std::string> ids;
        for (const auto& s : samples) ids.push_back(s.id);
        const FoldSplit split = kfold_split(ids, config.folds, config.seed);
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;
        for (const auto& fold : split.folds) {
            auto& members = fold_members.emplace_back();
            for (const auto& id : fold) members.push_back(index.at(id));
            std::sort(members.begin(), members.end());
        }
    }

    TrainResult result;
    for (int fold = 0; fold < config.folds; ++fold) {
        if (config.fold >= 0 && fold != config.fold) continue;
        std::vector<Sample> train_set, val_set;
        const auto& held_out = fold_members[static_cast<std::size_t>(fold)];
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const bool in_fold = std::binary_search(held_out.begin(), held_out.end(), i);
            if (config.folds == 1 || !in_fold) train_set.push_back(samples[i]);
            if (in_fold) val_set.push_back(samples[i]);
        }
        fmt::print(log, "fold {}: {} train / {} validation samples\n", fold, train_set.size(), val_set.size());
        result.folds.push_back(train_fold(config, fold, train_set, val_set, result.records, log));
    }

    {
        auto curves = open_output(config.out_dir / "curves.csv");
        curves << kCurvesHeader << "\n";
        for (const auto& r : result.records) curves << to_csv_row(r) << "\n";
    }

    auto summary = open_output(config.out_dir / "summary.csv");
    summary << "fold,best_epoch,val_loss,val_dc,val_ji\n";
    int completed = 0;
    for (const auto& f : result.folds) {
        if (f.aborted || f.best_epoch < 0) continue;
        summary << fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", f.fold, f.best_epoch, f.best_val_loss, f.best_val_dc,
                               f.best_val_ji);
        result.mean_best_dc += f.best_val_dc;
        result.mean_best_ji += f.best_val_ji;
        ++completed;
    }
    if (completed > 0) {
        result.mean_best_dc /= completed;
        result.mean_best_ji /= completed;
        summary << fmt::format("mean,,,{:.6f},{:.6f}\n", result.mean_best_dc, result.mean_best_ji);
    }
    fmt::print(log, "mean best validation DC {:.4f}, JI {:.4f} over {} fold(s)\n", result.mean_best_dc,
               result.mean_best_ji, completed);
    return result;
}

Normalization checkpoint_normalization(const std::filesystem::path& checkpoint) {
    const json side = json::parse(read_sidecar(checkpoint));
    if (auto it = side.find("normalization"); it != side.end()) return parse_normalization(it->get<std::string>());
    return Normalization::standardize;
}

EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const Sample> raw_samples,
                               const std::filesystem::path& out_dir, const std::optional<TrainConfig>& expected) {
    if (raw_samples.empty()) throw std::invalid_argument("evaluation set is empty");
    const Model<float> model = load_checkpoint(checkpoint);
    const ModelSpec& spec = model.spec();
    if (expected) {
        const ModelSpec want = expected->model_spec();
        if (want.depth != spec.depth || want.base_growth != spec.base_growth || want.input_size != spec.input_size)
            throw std::invalid_argument(fmt::format(
                "checkpoint architecture (depth {}, growth {}, size {}) does not match config (depth {}, growth {}, size {})",
                spec.depth, spec.base_growth, spec.input_size, want.depth, want.base_growth, want.input_size));
    }
    const Normalization mode = checkpoint_normalization(checkpoint);
    std::vector<Sample> samples;
    for (const auto& s : raw_samples) samples.push_back(preprocess(s, static_cast<std::size_t>(spec.input_size), mode));

    const Evaluation ev = evaluate_model(model, samples);
    EvalResult result;
    for (const auto& s : samples) result.ids.push_back(s.id);
    result.per_image = ev.per_image;
    result.aggregate = ev.mean;

    std::filesystem::create_directories(out_dir);
    auto csv = open_output(out_dir / "eval.csv");
    csv << "id," << kMetricCsvHeader << "\n";
    for (std::size_t i = 0; i < result.ids.size(); ++i) csv << result.ids[i] << "," << to_csv_row(result.per_image[i]) << "\n";
    csv << "mean," << to_csv_row(result.aggregate) << "\n";
    return result;
}

Mask predict_mask(const Model<float>& model, const Image& image, Normalization mode) {
    const auto size = static_cast<std::size_t>(model.spec().input_size);
    Sample s{"", normalize(resize_bilinear(image, size, size), mode), Mask(size, size)};
    const Tensor<float> probs = forward(model, image_batch<float>(std::span<const Sample>(&s, 1)));
    return binarize(probs).front();
}

void predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
             const std::filesystem::path& out_path) {
    const Model<float> model = load_checkpoint(checkpoint);
    const Image image = read_png_rgb(image_path);
    write_png_mask(out_path, predict_mask(model, image, checkpoint_normalization(checkpoint)));
}

}  // namespace skinnet
