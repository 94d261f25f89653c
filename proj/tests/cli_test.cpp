// Drives the installed CLI binary end to end through subprocesses.
// Usage: toolcoach_cli_tests <path-to-toolcoach-binary>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_failures = 0;

void expect(bool condition, const std::string& message) {
    if (!condition) {
        ++g_failures;
        std::cerr << "[FAIL] " << message << "\n";
    } else {
        std::cout << "[ ok ] " << message << "\n";
    }
}

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

RunResult run(const std::string& binary, const std::string& args, const fs::path& dir) {
    const fs::path out_path = dir / "stdout.txt";
    const fs::path err_path = dir / "stderr.txt";
    const std::string command = "cd '" + dir.string() + "' && '" + binary + "' " + args + " > '" +
                                out_path.string() + "' 2> '" + err_path.string() + "'";
    const int status = std::system(command.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out_path);
    result.err = slurp(err_path);
    return result;
}

json base_config() {
    return json{
        {"algorithm", "GRPO"},
        {"seed", 11},
        {"backend", {{"kind", "tiny"}, {"templates", {"FINAL: alpha", "FINAL: beta"}}}},
        {"learner", {{"group_size", 4}, {"kl_beta", 0.0}, {"learning_rate", 0.1}}},
        {"episode", {{"max_turns", 2}}},
        {"reward", {{"kind", "exact_match"}}},
        {"corpus_path", "demo/corpus.jsonl"},
        {"eval_items_path", "demo/eval_items.jsonl"},
        {"dataset_path", "demo/dataset.jsonl"},
        {"num_iterations", 6},
        {"checkpoint_dir", "ckpt"},
        {"metrics_path", "metrics.jsonl"},
        {"demo", {{"n_emails", 100}}},
    };
}

fs::path write_config(const fs::path& dir, const json& doc, const std::string& name) {
    const fs::path path = dir / name;
    std::ofstream(path) << doc.dump(2);
    return path;
}

// Metrics file with wall_time stripped from every record.
std::vector<std::string> canonical_metrics(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded()) continue;
        record.erase("wall_time_ms");
        lines.push_back(record.dump());
    }
    return lines;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: toolcoach_cli_tests <toolcoach-binary>\n";
        return 2;
    }
    const std::string binary = fs::absolute(argv[1]).string();
    const fs::path dir = fs::temp_directory_path() / "toolcoach_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // --- build-demo -----------------------------------------------------
    write_config(dir, base_config(), "config.json");
    RunResult demo = run(binary, "build-demo --config config.json", dir);
    expect(demo.exit_code == 0, "build-demo exits 0");
    expect(demo.out.find("config digest: ") != std::string::npos,
           "build-demo prints the config digest");
    expect(fs::exists(dir / "demo/corpus.jsonl"), "corpus file written");
    expect(fs::exists(dir / "demo/eval_items.jsonl"), "eval items file written");
    expect(fs::exists(dir / "demo/dataset.jsonl"), "dataset file written");

    // --- train happy path + determinism ----------------------------------
    RunResult train1 = run(binary, "train --config config.json", dir);
    expect(train1.exit_code == 0, "train exits 0");
    expect(fs::exists(dir / "metrics.jsonl"), "metrics file written");
    const std::vector<std::string> first_metrics = canonical_metrics(dir / "metrics.jsonl");
    // 100-email demo -> 5 eval items -> 5-query dataset; 6 iterations x 5.
    expect(first_metrics.size() == 30 + 1, "metrics carries a header plus one record per step");

    RunResult train2 = run(binary, "train --config config.json", dir);
    expect(train2.exit_code == 0, "second train exits 0");
    expect(canonical_metrics(dir / "metrics.jsonl") == first_metrics,
           "metrics byte-identical across reruns modulo wall_time");

    RunResult train_seeded = run(binary, "train --config config.json --seed 99", dir);
    expect(train_seeded.exit_code == 0, "seed override accepted");
    auto digest_line = [](const std::string& out) {
        const size_t pos = out.find("config digest: ");
        const size_t end = out.find('\n', pos);
        return out.substr(pos, end - pos);
    };
    expect(digest_line(train_seeded.out) != digest_line(train1.out),
           "seed override changes the digest");

    // --- report -----------------------------------------------------------
    RunResult report = run(binary, "report --metrics metrics.jsonl", dir);
    expect(report.exit_code == 0, "report exits 0");
    expect(report.out.find("mean reward") != std::string::npos, "report prints window means");
    expect(report.out.find("difference:") != std::string::npos, "report prints the difference");

    // --- eval ---------------------------------------------------------------
    json eval_config = base_config();
    eval_config["backend"] =
        json{{"kind", "scripted"}, {"rules", json::array()}, {"fallback", "FINAL: nope"}};
    write_config(dir, eval_config, "eval.json");
    RunResult eval = run(binary, "eval --config eval.json", dir);
    expect(eval.exit_code == 0, "eval exits 0");
    expect(eval.out.find("correctness_rate: 0.0000") != std::string::npos,
           "scripted non-answering policy evaluates to 0");

    // --- gen-tasks ------------------------------------------------------------
    json gen_config = base_config();
    const std::string candidate =
        json{{"query", "search for the budget email and read it"},
             {"required_tools", {"search_emails", "read_email"}},
             {"gold_answer", "$100,000"}}
            .dump();
    gen_config["backend"] = json{
        {"kind", "scripted"}, {"rules", json::array()}, {"fallback", candidate}};
    gen_config["gen"] = json{{"task_description", "find facts in the inbox"},
                             {"num_examples", 1},
                             {"min_tool_calls", 2},
                             {"max_words", 80},
                             {"output_path", "generated.jsonl"}};
    write_config(dir, gen_config, "gen.json");
    RunResult gen = run(binary, "gen-tasks --config gen.json", dir);
    expect(gen.exit_code == 0, "gen-tasks exits 0");
    expect(fs::exists(dir / "generated.jsonl"), "generated dataset written");
    expect(slurp(dir / "generated.jsonl").find("search for the budget email") != std::string::npos,
           "generated dataset contains the accepted query");

    // --- distill -----------------------------------------------------------
    json eval_tiny = base_config();
    write_config(dir, eval_tiny, "eval_tiny.json");

    json distill_config = base_config();
    distill_config["reward"] = json{{"kind", "step_efficiency"}};
    distill_config["distill"] = json{{"num_traces", 5},
                                     {"quality_threshold", 0.9},
                                     {"cache_path", "distill_cache"},
                                     {"teacher",
                                      {{"kind", "scripted"},
                                       {"rules", json::array()},
                                       {"fallback", "FINAL: alpha"}}}};
    write_config(dir, distill_config, "distill.json");
    RunResult distill = run(binary, "distill --config distill.json", dir);
    expect(distill.exit_code == 0, "distill exits 0");
    expect(distill.out.find("distilled on 25 teacher traces") != std::string::npos,
           "distill reports the trained trace count");  // 5 queries x 5 traces
    expect(fs::exists(dir / "distill_cache"), "distill cache directory written");

    // --- checkpoint flows ----------------------------------------------------
    RunResult warm = run(binary, "train --config distill.json --checkpoint ckpt/checkpoint_0", dir);
    expect(warm.exit_code == 0, "train resumes from the distill checkpoint");
    expect(warm.out.find("resumed at step 0") != std::string::npos,
           "warm start reports the resume step");

    RunResult eval_ckpt =
        run(binary, "eval --config eval_tiny.json --checkpoint ckpt/checkpoint_0", dir);
    expect(eval_ckpt.exit_code == 0, "eval accepts --checkpoint");

    // --- runtime failure exits 2 ----------------------------------------------
    json abort_config = base_config();
    abort_config["reward"] = json{{"kind", "judge"},
                                  {"judge_backend",
                                   {{"kind", "scripted"},
                                    {"rules", json::array()},
                                    {"fallback", "never a ranking"}}}};
    write_config(dir, abort_config, "abort.json");
    RunResult aborted = run(binary, "train --config abort.json", dir);
    expect(aborted.exit_code == 2, "persistent judge failure exits 2");
    expect(aborted.err.find("training aborted") != std::string::npos,
           "abort diagnostics reach stderr");

    // --- validation failures -------------------------------------------------
    json bad_algorithm = base_config();
    bad_algorithm["algorithm"] = "PPO";
    write_config(dir, bad_algorithm, "bad_algorithm.json");
    RunResult bad = run(binary, "train --config bad_algorithm.json", dir);
    expect(bad.exit_code == 1, "unknown algorithm exits 1");
    expect(bad.err.find("GRPO") != std::string::npos && bad.err.find("DPO") != std::string::npos &&
               bad.err.find("SFT") != std::string::npos,
           "unknown algorithm message names the valid set");

    json bad_key = base_config();
    bad_key["learner"]["mystery_knob"] = 3;
    write_config(dir, bad_key, "bad_key.json");
    RunResult unknown = run(binary, "train --config bad_key.json", dir);
    expect(unknown.exit_code == 1, "unknown config key exits 1");
    expect(unknown.err.find("learner.mystery_knob") != std::string::npos,
           "unknown key diagnostic carries the field path");

    RunResult missing = run(binary, "train", dir);
    expect(missing.exit_code == 1, "missing --config exits 1");

    RunResult no_file = run(binary, "train --config does_not_exist.json", dir);
    expect(no_file.exit_code == 1, "nonexistent config exits 1");

    if (g_failures > 0) {
        std::cerr << g_failures << " CLI check(s) failed\n";
        return 1;
    }
    std::cout << "all CLI checks passed\n";
    fs::remove_all(dir);
    return 0;
}
