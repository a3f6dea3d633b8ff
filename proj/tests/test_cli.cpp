#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "idlab/cli.hpp"

using namespace idlab;

namespace {
std::string tmp_out(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / "idlab_cli_test" / name;
    std::filesystem::remove_all(p);
    return p.string();
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    return nlohmann::json::parse(is);
}
} // namespace

TEST_CASE("symbols subcommand: elliptic and degenerate verdicts") {
    const std::string out = tmp_out("sym_elliptic");
    CHECK(run_cli({"symbols", "--p", "0.5", "--background", "constant", "--grid", "32",
                   "--out", out}) == 0);
    const auto rep = read_json(out + "/report.json");
    CHECK(rep["verdict"] == "elliptic");
    CHECK(std::abs(rep["delta"].get<double>() - 0.5) <= 0.01);
    CHECK(std::filesystem::exists(out + "/per_direction_minima.csv"));

    const std::string out2 = tmp_out("sym_degenerate");
    CHECK(run_cli({"symbols", "--p", "2", "--family", "single", "--background", "constant",
                   "--grid", "32", "--out", out2}) == 0);
    CHECK(read_json(out2 + "/report.json")["verdict"] == "degenerate");
}

TEST_CASE("oracle subcommand runs the power and cross checks") {
    CHECK(run_cli({"oracle", "--functional", "power", "--p", "2", "--eps", "1e-3", "--grid",
                   "32"}) == 0);
    CHECK(run_cli({"oracle", "--functional", "cross", "--p", "2", "--eps", "1e-3", "--grid",
                   "32"}) == 0);
}

TEST_CASE("forward subcommand writes solution dumps") {
    const std::string out = tmp_out("forward");
    CHECK(run_cli({"forward", "--background", "bump", "--grid", "32", "--out", out}) == 0);
    CHECK(std::filesystem::exists(out + "/u1.hsf1"));
    CHECK(std::filesystem::exists(out + "/u1.csv"));
    CHECK(std::filesystem::exists(out + "/u1_dx.hsf1"));
    CHECK(std::filesystem::exists(out + "/F1.pgm"));
}

TEST_CASE("config file parsing and validation errors") {
    const auto dir = std::filesystem::temp_directory_path() / "idlab_cli_test";
    std::filesystem::create_directories(dir);
    const auto cfg_path = (dir / "run.ini").string();
    {
        std::ofstream os(cfg_path);
        os << "# comment\n"
           << "grid = 32\n"
           << "p = 0.5\n"
           << "background = constant\n";
    }
    ExperimentConfig cfg;
    apply_config(cfg, parse_config_file(cfg_path));
    CHECK(cfg.grid == 32);
    CHECK(cfg.p == 0.5);
    CHECK(cfg.background == "constant");

    {
        std::ofstream os(cfg_path);
        os << "not_a_key = 1\n";
    }
    ExperimentConfig cfg2;
    CHECK_THROWS_AS(apply_config(cfg2, parse_config_file(cfg_path)),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_config_file("/nonexistent/file.ini"), std::invalid_argument);
}

TEST_CASE("exit codes: parse errors and validation errors return 1") {
    CHECK(run_cli({"frobnicate"}) == 1);
    CHECK(run_cli({"symbols", "--family", "quadruple"}) == 1);
    // invalid numeric range caught by config validation
    const std::string out = tmp_out("bad");
    CHECK(run_cli({"recon", "--p", "7", "--out", out}) == 1);
}

TEST_CASE("recon subcommand with a bundled config writes the run directory") {
    const std::string out = tmp_out("recon_p2");
    CHECK(run_cli({"recon", "--bundled", "p2_single", "--out", out}) == 0);
    const auto rep = read_json(out + "/report.json");
    CHECK(rep["ellipticity"]["verdict"] == "degenerate");
    CHECK(rep["reconstruction"]["parametrix_built"] == false);
    CHECK(std::filesystem::exists(out + "/config.ini"));
}
