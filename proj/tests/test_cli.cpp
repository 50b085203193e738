#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"

using namespace symdistill;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("symdistill_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> small_repro(const fs::path& out) {
    return {"symdistill", "repro",        "--law",        "spring", "--sims",        "10",  "--steps",
            "100",        "--epochs",     "1",            "--hidden", "16",          "--snapshots", "5",
            "--samples",  "200",          "--population", "50",       "--generations", "5", "--seed",
            "3",          "--out-dir",    out.string()};
}

}  // namespace

TEST_CASE("exit codes") {
    CHECK(cli::run({"symdistill", "--help"}) == 0);
    CHECK(cli::run({"symdistill", "simulate", "--no-such-flag"}) == 2);
    CHECK(cli::run({"symdistill", "simulate"}) == 2);
    CHECK(cli::run({"symdistill", "simulate", "--law", "bogus", "--out", "x.bin"}) == 2);
    const auto dir = scratch("missing");
    CHECK(cli::run({"symdistill", "probe", "--ckpt", (dir / "none.ckpt").string(), "--data",
                    (dir / "none.bin").string()}) == 1);
}

TEST_CASE("simulate writes a dataset and a manifest") {
    const auto dir = scratch("simulate");
    const auto out = dir / "d.bin";
    REQUIRE(cli::run({"symdistill", "simulate", "--law", "charge", "--sims", "5", "--steps", "50", "--seed", "4",
                      "--out", out.string()}) == 0);
    CHECK(fs::exists(out));
    const auto manifest = nlohmann::json::parse(slurp(dir / "d.bin.manifest.json"));
    CHECK(manifest["subcommand"] == "simulate");
    CHECK(manifest["seed"] == 4);
}

TEST_CASE("repro is byte-identical across runs") {
    const auto a = scratch("repro_a"), b = scratch("repro_b");
    REQUIRE(cli::run(small_repro(a)) == 0);
    REQUIRE(cli::run(small_repro(b)) == 0);
    for (const char* f : {"data.bin", "model.ckpt", "history.csv", "probe.csv", "distill.json", "summary.json"}) {
        INFO(f);
        CHECK(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
}
