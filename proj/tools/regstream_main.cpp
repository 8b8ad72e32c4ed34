// Command line front end: mask inspection, the verification suites, toy
// training, checkpoint inference and a small streaming benchmark.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "regstream/encoder.hpp"
#include "regstream/io.hpp"
#include "regstream/layout.hpp"
#include "regstream/mask.hpp"
#include "regstream/rng.hpp"
#include "regstream/streaming.hpp"
#include "regstream/trainer.hpp"
#include "regstream/verify.hpp"

namespace {

using namespace regstream;

int cmd_mask_dump(int frames, int chunk, int lookahead, int registers,
                  const std::string& csv_path) {
    const StreamConfig cfg{frames, chunk, lookahead, registers, 1};
    const ChunkLayout layout(cfg);
    const AttentionMask<double> mask = build_online_mask<double>(layout);

    std::cout << "slots: " << layout.size() << " (" << layout.num_chunks() << " chunks of "
              << chunk << ", look-ahead " << lookahead << ", " << registers
              << " registers)\n\n";
    std::cout << dump_layout(layout) << '\n';
    std::cout << "attention (# allowed, . masked), one row per query slot:\n";
    for (int q = 0; q < layout.size(); ++q) {
        const SlotDescriptor& s = layout.slot(q);
        std::printf("%3d %-9s c%-2d t%-3d ", q, slot_kind_name(s.kind), s.chunk, s.time);
        for (int k = 0; k < layout.size(); ++k)
            std::cout << (mask(q, k) == 0.0 ? '#' : '.');
        std::cout << '\n';
    }

    if (!csv_path.empty()) {
        MatrixX<double> grid(layout.size(), layout.size());
        for (int q = 0; q < layout.size(); ++q)
            for (int k = 0; k < layout.size(); ++k) grid(q, k) = mask(q, k) == 0.0 ? 1.0 : 0.0;
        save_matrix(csv_path, grid);
        std::cout << "\nwrote 0/1 grid to " << csv_path << '\n';
    }
    return 0;
}

int cmd_verify(const std::string& suite) {
    std::vector<CheckResult> results;
    if (suite.empty()) {
        results = run_all_suites();
    } else {
        results.push_back(run_suite(suite));
    }
    bool ok = true;
    for (const CheckResult& r : results) {
        std::printf("[%s] criterion %2d %-22s %d checks, %d failures\n",
                    r.passed() ? "PASS" : "FAIL", r.criterion, r.suite.c_str(), r.checks,
                    r.failures);
        for (const std::string& note : r.notes) std::printf("         %s\n", note.c_str());
        for (const std::string& msg : r.messages) std::printf("         ! %s\n", msg.c_str());
        ok = ok && r.passed();
    }
    return ok ? 0 : 1;
}

int cmd_train(const std::string& config_path, int steps, int registers, std::uint64_t seed,
              const std::string& out_dir, int log_every) {
    TrainConfig config;
    if (!config_path.empty()) config = load_train_config(config_path);
    if (steps > 0) config.steps = steps;
    if (registers >= 0) config.registers = registers;
    if (seed != 0) config.seed = seed;
    config.validate();

    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(out_dir + "/metrics.csv");
    if (!metrics) throw std::runtime_error("cannot write to " + out_dir);
    metrics << "step,chunk,lookahead,lr,L_off,L_on,L_d,L_fp,L_dual,L_total,accuracy\n";

    const auto t0 = std::chrono::steady_clock::now();
    TrainResult<double> result = run_training<double>(config, [&](const StepMetrics& m) {
        metrics << m.step << ',' << m.chunk << ',' << m.lookahead << ',' << m.lr << ','
                << m.l_off << ',' << m.l_on << ',' << m.l_d << ',' << m.l_fp << ','
                << m.l_dual << ',' << m.l_total << ',' << m.accuracy << '\n';
        if (log_every > 0 && (m.step % log_every == 0 || m.step == 1))
            std::printf("step %4d  C=%-2d L=%-2d  L_dual %8.4f  L_fp %7.4f  acc %.3f\n",
                        m.step, m.chunk, m.lookahead, m.l_dual, m.l_fp, m.accuracy);
    });
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_model(out_dir + "/model.rscp", result.model);
    save_train_config(out_dir + "/config.txt", config);
    std::printf("trained %d steps in %.1fs, wrote %s/{model.rscp,config.txt,metrics.csv}\n",
                config.steps, secs, out_dir.c_str());
    return 0;
}

int cmd_infer(const std::string& config_path, const std::string& model_path,
              const std::string& input_path, int chunk, int lookahead,
              const std::string& out_path, const std::string& registers_out, bool full) {
    const TrainConfig config = load_train_config(config_path);
    Model<double> model = init_model<double>(config);
    load_model(model_path, model);

    const MatrixX<double> input = load_matrix(input_path);
    if (input.cols() != config.width)
        throw std::runtime_error("input width " + std::to_string(input.cols()) +
                                 " does not match model width " + std::to_string(config.width));

    OnlineForward<double> out;
    if (full) {
        const StreamConfig cfg{static_cast<int>(input.rows()), chunk, lookahead,
                               config.registers, config.width};
        out = online_forward<double>(input, model.encoder, cfg);
    } else {
        out = stream_encode<double>(input, model.encoder, chunk, lookahead);
    }
    save_matrix(out_path, out.frame_outputs);
    std::printf("wrote %ld x %ld frame outputs to %s (%s path)\n",
                static_cast<long>(out.frame_outputs.rows()),
                static_cast<long>(out.frame_outputs.cols()), out_path.c_str(),
                full ? "full" : "streaming");

    if (!registers_out.empty() && config.registers > 0 && !out.register_outputs.empty()) {
        MatrixX<double> stacked(static_cast<int>(out.register_outputs.size()) * config.registers,
                                config.width);
        for (std::size_t i = 0; i < out.register_outputs.size(); ++i)
            stacked.middleRows(static_cast<int>(i) * config.registers, config.registers) =
                out.register_outputs[i];
        save_matrix(registers_out, stacked);
        std::printf("wrote %ld register rows (%d per chunk) to %s\n",
                    static_cast<long>(stacked.rows()), config.registers, registers_out.c_str());
    }

    const LatencyReport lat = latency_report(chunk, lookahead, 20.0);
    std::printf("theoretical latency: %.0f ms per chunk, %.0f ms with look-ahead\n",
                lat.chunk_ms, lat.total_ms);
    return 0;
}

int cmd_bench(int frames, int registers) {
    EncoderConfig ec;
    ec.layers = 2;
    ec.heads = 4;
    ec.width = 32;
    ec.ff = 64;
    ec.registers = registers;
    const EncoderParams<double> params = init_encoder<double>(ec, 1);
    Rng rng = seeded_rng(1, "bench-input");
    MatrixX<double> input(frames, ec.width);
    for (int t = 0; t < frames; ++t)
        for (int d = 0; d < ec.width; ++d) input(t, d) = normal(rng);

    std::printf("%-6s %-6s %-10s %-10s %-12s %-12s\n", "chunk", "la", "ms/chunk", "chunks/s",
                "cache", "latency");
    for (const int chunk : {8, 16, 32}) {
        const int lookahead = chunk / 4;
        StreamState<double> state(params, chunk, lookahead);
        const int usable = (frames / chunk) * chunk;
        const auto t0 = std::chrono::steady_clock::now();
        int pushed = 0;
        for (int begin = 0; begin + chunk <= usable; begin += chunk) {
            const int la_begin = begin + chunk;
            const int la_count = std::min(lookahead, frames - la_begin);
            const MatrixX<double> la =
                la_count > 0 ? MatrixX<double>(input.middleRows(la_begin, la_count))
                             : MatrixX<double>(0, ec.width);
            state.push_chunk(input.middleRows(begin, chunk), la);
            ++pushed;
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const LatencyReport lat = latency_report(chunk, lookahead, 20.0);
        std::printf("%-6d %-6d %-10.3f %-10.0f %-12zu %4.0f+%.0f ms\n", chunk, lookahead,
                    1000.0 * secs / pushed, pushed / secs, state.cache_bytes(), lat.chunk_ms,
                    lat.total_ms - lat.chunk_ms);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chunked streaming encoder with per-chunk register tokens"};
    app.require_subcommand(1);

    auto* mask_cmd = app.add_subcommand("mask-dump", "print the online attention mask");
    int frames = 6, chunk = 2, lookahead = 1, registers = 1;
    std::string csv_path;
    mask_cmd->add_option("--frames,-t", frames, "total frames");
    mask_cmd->add_option("--chunk,-c", chunk, "chunk size");
    mask_cmd->add_option("--lookahead,-l", lookahead, "look-ahead frames");
    mask_cmd->add_option("--registers,-r", registers, "registers per chunk");
    mask_cmd->add_option("--csv", csv_path, "also write a 0/1 grid to this CSV file");

    auto* verify_cmd = app.add_subcommand("verify", "run the verification suites");
    std::string suite;
    verify_cmd->add_option("--suite,-s", suite, "run a single suite by name");
    bool list_suites = false;
    verify_cmd->add_flag("--list", list_suites, "list suite names and exit");

    auto* train_cmd = app.add_subcommand("train", "run the toy training recipe");
    std::string train_config, out_dir = "run";
    int steps = -1, train_registers = -1, log_every = 50;
    std::uint64_t seed = 0;
    train_cmd->add_option("--config", train_config, "key=value config file");
    train_cmd->add_option("--steps", steps, "override step count");
    train_cmd->add_option("--registers", train_registers, "override registers per chunk");
    train_cmd->add_option("--seed", seed, "override the master seed (nonzero)");
    train_cmd->add_option("--out,-o", out_dir, "output directory");
    train_cmd->add_option("--log-every", log_every, "console progress interval, 0 silences");

    auto* infer_cmd = app.add_subcommand("infer", "encode a matrix with a trained checkpoint");
    std::string infer_config, model_path, input_path, out_path = "outputs.rsmx", registers_out;
    int infer_chunk = 8, infer_lookahead = 0;
    bool full = false;
    infer_cmd->add_option("--config", infer_config, "config written next to the checkpoint")
        ->required();
    infer_cmd->add_option("--model", model_path, "checkpoint file")->required();
    infer_cmd->add_option("--input", input_path, "input matrix (.rsmx or .csv)")->required();
    infer_cmd->add_option("--chunk,-c", infer_chunk, "chunk size");
    infer_cmd->add_option("--lookahead,-l", infer_lookahead, "look-ahead frames");
    infer_cmd->add_option("--out,-o", out_path, "frame output file");
    infer_cmd->add_option("--registers-out", registers_out, "stacked register outputs file");
    infer_cmd->add_flag("--full", full, "use the assembled full pass instead of streaming");

    auto* bench_cmd = app.add_subcommand("bench", "time the streaming path");
    int bench_frames = 512, bench_registers = 1;
    bench_cmd->add_option("--frames", bench_frames, "input length");
    bench_cmd->add_option("--registers", bench_registers, "registers per chunk");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mask_cmd->parsed()) return cmd_mask_dump(frames, chunk, lookahead, registers, csv_path);
        if (verify_cmd->parsed()) {
            if (list_suites) {
                for (const std::string& name : regstream::suite_names())
                    std::cout << name << '\n';
                return 0;
            }
            return cmd_verify(suite);
        }
        if (train_cmd->parsed())
            return cmd_train(train_config, steps, train_registers, seed, out_dir, log_every);
        if (infer_cmd->parsed())
            return cmd_infer(infer_config, model_path, input_path, infer_chunk, infer_lookahead,
                             out_path, registers_out, full);
        if (bench_cmd->parsed()) return cmd_bench(bench_frames, bench_registers);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
