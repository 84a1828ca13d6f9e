#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "skinnet/checkpoint.hpp"
#include "skinnet/trainer.hpp"

using namespace skinnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig tiny(const std::string& out, int samples, int folds, int epochs) {
    TrainConfig c;
    c.out_dir = fs::path("trainer_tmp") / out;
    fs::remove_all(c.out_dir);
    c.synthetic = samples;
    c.img_size = 16;
    c.depth = 2;
    c.base_growth = 2;
    c.batch_size = 4;
    c.folds = folds;
    c.epochs = epochs;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("five folds of one epoch") {
    const TrainConfig c = tiny("five", 10, 5, 1);
    std::ostringstream log;
    const TrainResult r = train(c, log);
    CHECK(r.records.size() == 5);
    CHECK(r.folds.size() == 5);
    CHECK_FALSE(r.any_aborted());
    for (int f = 0; f < 5; ++f) {
        CHECK(fs::exists(c.out_dir / ("fold" + std::to_string(f) + "_best.sknt")));
        CHECK(fs::exists(c.out_dir / ("fold" + std::to_string(f) + "_best.sknt.json")));
    }
    std::istringstream curves(slurp(c.out_dir / "curves.csv"));
    std::string header;
    std::getline(curves, header);
    CHECK(header == "fold,epoch,train_loss,val_loss,val_dc,val_ji,lr");
    int rows = 0;
    for (std::string line; std::getline(curves, line);) ++rows;
    CHECK(rows == 5);
    CHECK(fs::exists(c.out_dir / "summary.csv"));
    CHECK(load_config(c.out_dir / "config.json").folds == 5);
}

TEST_CASE("single fold selection") {
    TrainConfig c = tiny("single", 10, 5, 2);
    c.fold = 3;
    std::ostringstream log;
    const TrainResult r = train(c, log);
    REQUIRE(r.folds.size() == 1);
    CHECK(r.folds[0].fold == 3);
    CHECK(r.records.size() == 2);
    CHECK(fs::exists(c.out_dir / "fold3_best.sknt"));
    CHECK_FALSE(fs::exists(c.out_dir / "fold0_best.sknt"));
}

TEST_CASE("identical seeded runs are byte-identical") {
    const TrainConfig a = tiny("det_a", 10, 2, 3);
    TrainConfig b = a;
    b.out_dir = "trainer_tmp/det_b";
    fs::remove_all(b.out_dir);
    std::ostringstream log;
    train(a, log);
    train(b, log);
    CHECK(slurp(a.out_dir / "curves.csv") == slurp(b.out_dir / "curves.csv"));
    for (const char* f : {"fold0_best.sknt", "fold1_best.sknt", "summary.csv"})
        CHECK(slurp(a.out_dir / f) == slurp(b.out_dir / f));

    TrainConfig other = a;
    other.seed = 4;
    other.out_dir = "trainer_tmp/det_c";
    fs::remove_all(other.out_dir);
    train(other, log);
    CHECK(slurp(a.out_dir / "fold0_best.sknt") != slurp(other.out_dir / "fold0_best.sknt"));
}

TEST_CASE("learning rate in curves never increases") {
    TrainConfig c = tiny("lr", 6, 1, 12);
    c.plateau_patience = 1;
    std::ostringstream log;
    const TrainResult r = train(c, log);
    for (std::size_t i = 1; i < r.records.size(); ++i) CHECK(r.records[i].lr <= r.records[i - 1].lr);
}

TEST_CASE("training errors") {
    std::ostringstream log;
    CHECK_THROWS(train(tiny("small", 3, 5, 1), log));
    TrainConfig bad = tiny("bad", 10, 5, 1);
    bad.img_size = 18;  // not divisible by 2^depth
    CHECK_THROWS(train(bad, log));
    TrainConfig empty = tiny("empty", 0, 5, 1);
    empty.data_dir = "trainer_tmp/no_such_dir";
    CHECK_THROWS(train(empty, log));
}

TEST_CASE("config JSON") {
    TrainConfig c;
    c.epochs = 7;
    c.lr = 3e-4;
    c.normalization = Normalization::minmax;
    c.augmentation.rotation_deg = 10;
    const TrainConfig back = config_from_json(config_to_json(c));
    CHECK(back.epochs == 7);
    CHECK(back.lr == 3e-4);
    CHECK(back.normalization == Normalization::minmax);
    CHECK(back.augmentation.rotation_deg == 10);
    CHECK(config_from_json(R"({"epochs": 3})").epochs == 3);
    CHECK_THROWS(config_from_json(R"({"epoch": 3})"));
    CHECK_THROWS(config_from_json("[1,2]"));
}

TEST_CASE("evaluation") {
    const TrainConfig c = tiny("eval", 6, 1, 2);
    std::ostringstream log;
    train(c, log);
    const fs::path ckpt = c.out_dir / "fold0_best.sknt";
    const Model<float> model = load_checkpoint(ckpt);
    CHECK(checkpoint_normalization(ckpt) == Normalization::standardize);

    // ground truth = the model's own predictions
    auto raw = synthetic_dataset(6, 16, 99);
    for (auto& s : raw) s.mask = predict_mask(model, s.image, Normalization::standardize);
    const fs::path out = c.out_dir / "self";
    const EvalResult r = evaluate_checkpoint(ckpt, raw, out);
    CHECK(r.ids.size() == 6);
    for (double v : {r.aggregate.ac, r.aggregate.dc, r.aggregate.ji, r.aggregate.se, r.aggregate.sp}) CHECK(v == 1.0);
    const std::string csv = slurp(out / "eval.csv");
    CHECK(csv.rfind("id,ac,dc,ji,se,sp\n", 0) == 0);
    CHECK(csv.find("mean,1.0000,1.0000,1.0000,1.0000,1.0000") != std::string::npos);

    const fs::path none = c.out_dir / "none";
    CHECK_THROWS(evaluate_checkpoint(ckpt, std::span<const Sample>{}, none));
    CHECK_FALSE(fs::exists(none / "eval.csv"));

    TrainConfig mismatch = c;
    mismatch.base_growth = 4;
    CHECK_THROWS(evaluate_checkpoint(ckpt, raw, c.out_dir / "mm", mismatch));
}

TEST_CASE("predict writes a binary mask at the model size") {
    const TrainConfig c = tiny("predict", 6, 1, 1);
    std::ostringstream log;
    train(c, log);
    const fs::path ckpt = c.out_dir / "fold0_best.sknt";
    const auto raw = synthetic_dataset(1, 40, 5);
    const fs::path img = c.out_dir / "input.png";
    write_png_rgb(img, raw[0].image);

    predict(ckpt, img, c.out_dir / "a.png");
    predict(ckpt, img, c.out_dir / "b.png");
    CHECK(slurp(c.out_dir / "a.png") == slurp(c.out_dir / "b.png"));

    // read back as a grayscale "image": every channel is either 0 or 1
    const Image back = read_png_rgb(c.out_dir / "a.png");
    CHECK(back.height == 16);
    CHECK(back.width == 16);
    for (float v : back.pixels) CHECK((v == 0.0f || v == 1.0f));
    CHECK_THROWS(predict(ckpt, c.out_dir / "missing.png", c.out_dir / "c.png"));
}
