#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "regstream/io.hpp"
#include "regstream/rng.hpp"

using namespace regstream;
using Mat = MatrixX<double>;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("regstream_io_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Mat rand_mat(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

}  // namespace

TEST_CASE("binary matrix round trip stores float32") {
    TempDir dir;
    Rng rng = seeded_rng(91, "io-binary");
    const Mat m = rand_mat(5, 3, rng);
    save_matrix(dir.file("m.rsmx"), m);
    const Mat back = load_matrix(dir.file("m.rsmx"));
    CHECK(back == m.cast<float>().cast<double>());
}

TEST_CASE("csv matrix round trip keeps full precision") {
    TempDir dir;
    Rng rng = seeded_rng(91, "io-csv");
    const Mat m = rand_mat(4, 6, rng);
    save_matrix(dir.file("m.csv"), m);
    const Mat back = load_matrix(dir.file("m.csv"));
    CHECK(back == m);  // 17 significant digits round-trip doubles exactly
}

TEST_CASE("loader sniffs the magic regardless of extension") {
    TempDir dir;
    Mat m(2, 2);
    m << 1, 2, 3, 4;
    save_matrix(dir.file("binary.dat"), m);  // no .csv suffix: binary format
    CHECK(load_matrix(dir.file("binary.dat")) == m);

    std::ofstream csv(dir.file("plain.txt"));
    csv << "1,2\n3,4\n";
    csv.close();
    CHECK(load_matrix(dir.file("plain.txt")) == m);
}

TEST_CASE("matrix loader error paths") {
    TempDir dir;
    CHECK_THROWS_AS(load_matrix(dir.file("missing.rsmx")), std::runtime_error);

    std::ofstream ragged(dir.file("ragged.csv"));
    ragged << "1,2,3\n4,5\n";
    ragged.close();
    CHECK_THROWS_AS(load_matrix(dir.file("ragged.csv")), std::runtime_error);

    std::ofstream junk(dir.file("junk.csv"));
    junk << "1,banana\n";
    junk.close();
    CHECK_THROWS_AS(load_matrix(dir.file("junk.csv")), std::runtime_error);

    std::ofstream empty(dir.file("empty.csv"));
    empty.close();
    CHECK_THROWS_AS(load_matrix(dir.file("empty.csv")), std::runtime_error);

    Mat m(2, 2);
    m << 1, 2, 3, 4;
    save_matrix(dir.file("cut.rsmx"), m);
    std::filesystem::resize_file(dir.file("cut.rsmx"), 12);
    CHECK_THROWS_AS(load_matrix(dir.file("cut.rsmx")), std::runtime_error);
}

TEST_CASE("checkpoint round trip preserves doubles bitwise") {
    TempDir dir;
    Rng rng = seeded_rng(92, "io-ckpt");
    std::vector<std::pair<std::string, Mat>> tensors;
    tensors.emplace_back("alpha", rand_mat(3, 4, rng));
    tensors.emplace_back("beta", rand_mat(1, 1, rng));
    tensors.emplace_back("empty", Mat(0, 8));
    std::vector<std::pair<std::string, const Mat*>> refs;
    for (const auto& [name, mat] : tensors) refs.emplace_back(name, &mat);
    save_checkpoint(dir.file("t.rscp"), refs);
    const auto back = load_checkpoint(dir.file("t.rscp"));
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].first == tensors[i].first);
        CHECK(back[i].second == tensors[i].second);
    }
}

TEST_CASE("model save and load") {
    TempDir dir;
    TrainConfig cfg;
    cfg.steps = 1;
    cfg.frames = 8;
    cfg.width = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff = 16;
    cfg.registers = 2;
    cfg.groups = 1;
    cfg.entries = 4;
    cfg.code_dim = 4;

    cfg.seed = 5;
    Model<double> a = init_model<double>(cfg);
    save_model(dir.file("a.rscp"), a);

    cfg.seed = 6;
    Model<double> b = init_model<double>(cfg);
    REQUIRE(a.encoder.layers[0].Wq != b.encoder.layers[0].Wq);
    load_model(dir.file("a.rscp"), b);
    for (auto& [name, tensor] : a.param_refs()) {
        bool matched = false;
        for (auto& [bname, btensor] : b.param_refs())
            if (bname == name) {
                CHECK(*btensor == *tensor);
                matched = true;
            }
        CHECK(matched);
    }

    // Loading into a model with a different schema fails loudly.
    cfg.registers = 1;
    Model<double> c = init_model<double>(cfg);
    CHECK_THROWS_AS(load_model(dir.file("a.rscp"), c), std::runtime_error);
}

TEST_CASE("train config round trip") {
    TempDir dir;
    TrainConfig cfg;
    cfg.steps = 123;
    cfg.batch = 4;
    cfg.frames = 24;
    cfg.width = 16;
    cfg.layers = 3;
    cfg.heads = 4;
    cfg.ff = 48;
    cfg.registers = 2;
    cfg.chunk_min = 3;
    cfg.chunk_max = 9;
    cfg.mask_prob = 0.1;
    cfg.mask_span = 2;
    cfg.groups = 4;
    cfg.entries = 8;
    cfg.code_dim = 16;
    cfg.temperature = 0.5;
    cfg.loss.alpha = 0.2;
    cfg.loss.beta = 0.9;
    cfg.loss.kappa = 0.07;
    cfg.loss.distractors = 6;
    cfg.peak_lr = 5e-4;
    cfg.warmup_frac = 0.2;
    cfg.seed = 4242;
    save_train_config(dir.file("cfg.txt"), cfg);
    const TrainConfig back = load_train_config(dir.file("cfg.txt"));
    CHECK(back.steps == cfg.steps);
    CHECK(back.batch == cfg.batch);
    CHECK(back.frames == cfg.frames);
    CHECK(back.width == cfg.width);
    CHECK(back.layers == cfg.layers);
    CHECK(back.heads == cfg.heads);
    CHECK(back.ff == cfg.ff);
    CHECK(back.registers == cfg.registers);
    CHECK(back.chunk_min == cfg.chunk_min);
    CHECK(back.chunk_max == cfg.chunk_max);
    CHECK(back.mask_prob == cfg.mask_prob);
    CHECK(back.mask_span == cfg.mask_span);
    CHECK(back.groups == cfg.groups);
    CHECK(back.entries == cfg.entries);
    CHECK(back.code_dim == cfg.code_dim);
    CHECK(back.temperature == cfg.temperature);
    CHECK(back.loss.alpha == cfg.loss.alpha);
    CHECK(back.loss.beta == cfg.loss.beta);
    CHECK(back.loss.kappa == cfg.loss.kappa);
    CHECK(back.loss.distractors == cfg.loss.distractors);
    CHECK(back.peak_lr == cfg.peak_lr);
    CHECK(back.warmup_frac == cfg.warmup_frac);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("config parser tolerates comments, rejects unknown keys") {
    TempDir dir;
    {
        std::ofstream f(dir.file("partial.txt"));
        f << "# only a few keys\n\nsteps=9\nwidth=16\n";
    }
    const TrainConfig cfg = load_train_config(dir.file("partial.txt"));
    CHECK(cfg.steps == 9);
    CHECK(cfg.width == 16);
    CHECK(cfg.batch == TrainConfig{}.batch);  // untouched default

    {
        std::ofstream f(dir.file("unknown.txt"));
        f << "stepz=9\n";
    }
    CHECK_THROWS_AS(load_train_config(dir.file("unknown.txt")), std::runtime_error);

    {
        std::ofstream f(dir.file("bad.txt"));
        f << "steps\n";
    }
    CHECK_THROWS_AS(load_train_config(dir.file("bad.txt")), std::runtime_error);

    {
        std::ofstream f(dir.file("invalid.txt"));
        f << "steps=0\n";  // parses, then fails validation
    }
    CHECK_THROWS_AS(load_train_config(dir.file("invalid.txt")), std::invalid_argument);
}
