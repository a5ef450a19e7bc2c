#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "msfan/checkpoint.hpp"
#include "msfan/config.hpp"
#include "msfan/rng.hpp"

using namespace msfan;

TEST_CASE("defaults validate and serialize round-trips") {
    RunConfig cfg;
    cfg.validate();
    const std::string text = serialize_config(cfg);
    const RunConfig parsed = parse_config_text(text);
    CHECK(serialize_config(parsed) == text);
    CHECK(parsed.train.ssl.phi == doctest::Approx(0.1));
    CHECK(parsed.train.ssl.margin == doctest::Approx(0.1));
    CHECK(parsed.train.ssl.tau == doctest::Approx(0.1));
    CHECK(parsed.train.lambda_mps == doctest::Approx(1.0));
    CHECK(parsed.train.lambda_ssc == doctest::Approx(0.1));
    CHECK(parsed.train.lambda_mi == doctest::Approx(0.1));
    CHECK(parsed.train.batch_size == 64);
    CHECK(parsed.train.sgd.learning_rate == doctest::Approx(0.01));
    CHECK(parsed.train.sgd.momentum == doctest::Approx(0.9));
}

TEST_CASE("comments, blanks, and whitespace are tolerated") {
    const std::string text =
        "# reference run\n"
        "\n"
        "  steps = 25  # fast\n"
        "seed=9\n"
        "cps_direction=tgt_to_src\n"
        "cluster_counts=4,4,8\n";
    const RunConfig cfg = parse_config_text(text);
    CHECK(cfg.train.steps == 25);
    CHECK(cfg.train.seed == 9);
    CHECK(cfg.generator.seed == 9);
    CHECK(cfg.train.cps_direction == CpsDirection::tgt_to_src);
    REQUIRE(cfg.train.cluster_counts.size() == 3);
    CHECK(cfg.train.cluster_counts[2] == 8);
}

TEST_CASE("unknown keys are rejected by name") {
    try {
        parse_config_text("shotz=1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("shotz") != std::string::npos);
    }
}

TEST_CASE("bad values and invariant violations are config errors") {
    CHECK_THROWS_AS(parse_config_text("steps=abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("enable_mi=maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("learning_rate=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("sgd_momentum=1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("support_threshold=1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("lambda_mi=-0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("shots_per_class=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("cluster_counts=3,0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("steps\n"), ConfigError);
}

TEST_CASE("cluster counts resolve to (n_c, n_c, 2 n_c) by default") {
    TrainConfig tc;
    const std::vector<std::size_t> counts = tc.resolved_cluster_counts(5);
    REQUIRE(counts.size() == 3);
    CHECK(counts[0] == 5);
    CHECK(counts[1] == 5);
    CHECK(counts[2] == 10);

    tc.cluster_counts = {7};
    CHECK(tc.resolved_cluster_counts(5) == std::vector<std::size_t>{7});
}

TEST_CASE("checkpoint round-trips the model exactly") {
    Rng rng(5);
    ModelState model;
    model.extractor = FeatureExtractor(6, 8, 4);
    model.extractor.init(rng);
    for (int i = 0; i < 3; ++i) {
        CosineClassifier clf(4, 5, 0.05);
        clf.init(rng);
        model.classifiers.push_back(std::move(clf));
    }
    model.config.train.steps = 123;
    model.config.generator.seed = 77;
    model.config.train.seed = 77;

    const std::string path =
        (std::filesystem::temp_directory_path() / "msfan_ckpt_test.txt").string();
    save_checkpoint(model, path);
    const ModelState loaded = load_checkpoint(path);

    CHECK(loaded.extractor.w1 == model.extractor.w1);
    CHECK(loaded.extractor.b1 == model.extractor.b1);
    CHECK(loaded.extractor.w2 == model.extractor.w2);
    CHECK(loaded.extractor.b2 == model.extractor.b2);
    REQUIRE(loaded.classifiers.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded.classifiers[i].weights == model.classifiers[i].weights);
        CHECK(loaded.classifiers[i].temperature == model.classifiers[i].temperature);
    }
    CHECK(serialize_config(loaded.config) == serialize_config(model.config));
    CHECK(loaded.config.train.steps == 123);

    // Saving the loaded model reproduces the file byte for byte.
    const std::string path2 =
        (std::filesystem::temp_directory_path() / "msfan_ckpt_test2.txt").string();
    save_checkpoint(loaded, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    const std::string text_a{std::istreambuf_iterator<char>(a), std::istreambuf_iterator<char>()};
    const std::string text_b{std::istreambuf_iterator<char>(b), std::istreambuf_iterator<char>()};
    CHECK(text_a == text_b);
}

TEST_CASE("corrupt checkpoints are data errors") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "msfan_ckpt_bad.txt").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "MSFAN-CHECKPOINT v2\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "MSFAN-CHECKPOINT v1\nconfig 0\nextractor 2 2 2\nw1 1 2 3\n";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/msfan.ckpt"), DataError);
}
