#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "dka");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = dka::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class CliTest : public ::testing::Test {
protected:
    fs::path root;

    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root = fs::temp_directory_path() / (std::string("dka-cli-") + info->name());
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }

    fs::path write(const std::string& name, const std::string& text) const {
        const auto p = root / name;
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }

    fs::path run_dir(const std::string& command, const std::string& label) const { return root / command / label; }

    // Byte comparison against tests/golden; DKA_UPDATE_GOLDEN=1 rewrites the golden file instead.
    static void expect_golden(const fs::path& produced, const std::string& golden_name) {
        const fs::path golden = fs::path(DKA_GOLDEN_DIR) / golden_name;
        ASSERT_TRUE(fs::exists(produced)) << produced;
        if (std::getenv("DKA_UPDATE_GOLDEN")) {
            fs::create_directories(golden.parent_path());
            fs::copy_file(produced, golden, fs::copy_options::overwrite_existing);
            return;
        }
        ASSERT_TRUE(fs::exists(golden)) << golden;
        EXPECT_EQ(slurp(produced), slurp(golden)) << golden_name;
    }
};

const std::string kThreePoints = "1,0,0;0,1,0;0,0.6,0.8";

}  // namespace

TEST_F(CliTest, AnalyzeRegimes) {
    auto r = run_cli({"analyze", "--kernel", "relu"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["regime"], "sparse");
    EXPECT_EQ(j["symmetry_set"], "{1}");
    EXPECT_NEAR(j["rho"].get<double>(), 1.5, 1e-15);
    EXPECT_NEAR(j["h"].get<double>(), 4.5 * std::numbers::pi * std::numbers::pi, 1e-9);

    r = run_cli({"analyze", "--kernel", "exp", "--gamma", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["regime"], "low-disorder");
    EXPECT_EQ(j["symmetry_set"], "{-1,1}");
    EXPECT_NEAR(j["kprime1"].get<double>(), 0.5, 1e-12);

    r = run_cli({"analyze", "--kernel", "exp", "--gamma", "0.25", "--out", root.string(), "--label", "hd"});
    ASSERT_EQ(r.code, 0) << r.err;
    j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["regime"], "high-disorder");
    EXPECT_NEAR(j["t_star"].get<double>(), 0.5, 1e-12);
    EXPECT_EQ(slurp(run_dir("analyze", "hd") / "report.json"), r.out);
    const auto meta = nlohmann::json::parse(slurp(run_dir("analyze", "hd") / "meta.json"));
    EXPECT_EQ(meta["command"], "analyze");
    EXPECT_FALSE(meta["kernel_digest"].get<std::string>().empty());
}

TEST_F(CliTest, ProfileGolden) {
    auto r = run_cli({"profile", "--kernel", "relu", "--grid", "chebyshev:21", "--out", root.string(), "--label", "relu"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_golden(run_dir("profile", "relu") / "profile.csv", "relu_profile.csv");

    r = run_cli({"profile", "--kernel", "exp", "--gamma", "2", "--grid", "chebyshev:21", "--lmax", "6", "--out",
                 root.string(), "--label", "exp2"});
    ASSERT_EQ(r.code, 0) << r.err;
    expect_golden(run_dir("profile", "exp2") / "profile.csv", "exp2_profile.csv");
    expect_golden(run_dir("profile", "exp2") / "spectral.csv", "exp2_spectral.csv");
    const auto meta = nlohmann::json::parse(slurp(run_dir("profile", "exp2") / "meta.json"));
    EXPECT_EQ(meta["regime"], "low-disorder");
    EXPECT_EQ(meta["invariant_violations"], 0);
    EXPECT_EQ(meta["all_converged"], true);
}

TEST_F(CliTest, ProfileHighDisorderIsDomainError) {
    const auto r = run_cli({"profile", "--kernel", "exp", "--gamma", "0.25", "--out", root.string()});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("high-disorder"), std::string::npos);
}

TEST_F(CliTest, RatesGolden) {
    const auto y = write("y.csv", "# y vectors\n0.1,-0.2,0.3\n0.5,0.5,0.5\n");
    for (const auto& [label, extra] : std::vector<std::pair<std::string, std::vector<std::string>>>{
             {"relu", {"--kernel", "relu"}}, {"exp2", {"--kernel", "exp", "--gamma", "2"}}}) {
        std::vector<std::string> args{"rates", "--points", kThreePoints, "--y-file", y.string(), "--out", root.string(),
                                      "--label", label};
        args.insert(args.end(), extra.begin(), extra.end());
        const auto r = run_cli(args);
        ASSERT_EQ(r.code, 0) << r.err;
        expect_golden(run_dir("rates", label) / "rates.csv", label + "_rates.csv");
        expect_golden(run_dir("rates", label) / "contraction.csv", label + "_contraction.csv");
        const auto b1 = nlohmann::json::parse(slurp(run_dir("rates", label) / "B1.json"));
        EXPECT_EQ(b1["which"], "B1");
        EXPECT_EQ(b1["size"], 3);
    }
}

TEST_F(CliTest, RatesNeedMatchingY) {
    const auto y = write("y.csv", "0.1,0.2\n");
    const auto r = run_cli({"rates", "--kernel", "relu", "--points", kThreePoints, "--y-file", y.string(), "--out",
                            root.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("y:"), std::string::npos);
    EXPECT_EQ(run_cli({"rates", "--kernel", "relu", "--points", kThreePoints, "--out", root.string()}).code, 2);
}

TEST_F(CliTest, SampleGoldenAndSeedDeterminism) {
    const std::vector<std::string> base{"sample", "--kernel", "exp", "--gamma", "2", "--points", "uniform:3:1",
                                        "--depth", "5", "--samples", "64", "--out", root.string()};
    auto args = base;
    args.insert(args.end(), {"--seed", "3", "--label", "a"});
    ASSERT_EQ(run_cli(args).code, 0);
    args = base;
    args.insert(args.end(), {"--seed", "3", "--label", "b", "--threads", "2"});
    ASSERT_EQ(run_cli(args).code, 0);
    args = base;
    args.insert(args.end(), {"--seed", "4", "--label", "c"});
    ASSERT_EQ(run_cli(args).code, 0);
    const auto a = slurp(run_dir("sample", "a") / "samples.csv");
    EXPECT_EQ(a, slurp(run_dir("sample", "b") / "samples.csv"));
    EXPECT_NE(a, slurp(run_dir("sample", "c") / "samples.csv"));
    expect_golden(run_dir("sample", "a") / "samples.csv", "exp2_samples.csv");
    expect_golden(run_dir("sample", "a") / "covariance.csv", "exp2_covariance.csv");
    const auto meta = nlohmann::json::parse(slurp(run_dir("sample", "a") / "meta.json"));
    EXPECT_EQ(meta["seed"], 3);
    EXPECT_EQ(meta["depth"], 5);
    EXPECT_EQ(meta["samples"], 64);
    dka::thread_cap() = 0;
}

TEST_F(CliTest, VerifyLowDisorderPasses) {
    const auto r = run_cli({"verify", "-c", std::string(DKA_CONFIG_DIR) + "/exp_gamma2.json", "--out", root.string(),
                            "--label", "v"});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
    EXPECT_NE(r.out.find("PASS covariance_convergence"), std::string::npos);
    EXPECT_NE(r.out.find("PASS tail_rate_curve"), std::string::npos);
    const auto summary = nlohmann::json::parse(slurp(run_dir("verify", "v") / "summary.json"));
    EXPECT_EQ(summary["result"], "PASS");
    expect_golden(run_dir("verify", "v") / "convergence.csv", "exp2_convergence.csv");
    expect_golden(run_dir("verify", "v") / "tail.csv", "exp2_tail.csv");
}

TEST_F(CliTest, VerifyHighDisorder) {
    const auto r = run_cli({"verify", "-c", std::string(DKA_CONFIG_DIR) + "/exp_gamma025.json", "--out", root.string(),
                            "--label", "hd"});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS high_disorder_limits"), std::string::npos);
    EXPECT_TRUE(fs::exists(run_dir("verify", "hd") / "high_disorder.csv"));
}

TEST_F(CliTest, VerifyFailureExitCode) {
    // A shallow schedule is far from the limit.
    const auto r = run_cli({"verify", "--kernel", "exp", "--gamma", "2", "--L", "1,2", "--samples", "500", "--out",
                            root.string(), "--label", "f"});
    EXPECT_EQ(r.code, 4) << r.out << r.err;
    EXPECT_NE(r.out.find("FAIL covariance_convergence"), std::string::npos);
    const auto summary = nlohmann::json::parse(slurp(run_dir("verify", "f") / "summary.json"));
    EXPECT_EQ(summary["result"], "FAIL");
}

TEST_F(CliTest, MalformedJsonReportsPosition) {
    const auto cfg = write("bad.json", "{\n  \"kernel\": \"relu\",\n  \"dim\": ,\n}\n");
    const auto r = run_cli({"analyze", "-c", cfg.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(cfg.string() + ":3:"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("malformed JSON"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownAndInvalidKeysReportLine) {
    auto cfg = write("unknown.json", "{\n  \"kernel\": \"relu\",\n  \"depht\": 3\n}\n");
    auto r = run_cli({"analyze", "-c", cfg.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(cfg.string() + ":3: depht"), std::string::npos) << r.err;

    cfg = write("gamma.json", "{\n  \"kernel\": {\"kind\": \"exp\", \"gamma\": -1}\n}\n");
    r = run_cli({"analyze", "-c", cfg.string()});
    EXPECT_EQ(r.code, 2) << r.err;

    cfg = write("sched.json", "{\n  \"kernel\": \"relu\",\n  \"L_schedule\": [10, 5]\n}\n");
    r = run_cli({"verify", "-c", cfg.string(), "--out", root.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(":3: L_schedule"), std::string::npos) << r.err;
}

TEST_F(CliTest, CommandLineErrors) {
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(run_cli({"analyze", "--kernel", "softmax"}).code, 2);
    EXPECT_EQ(run_cli({"analyze", "--kernel", "exp", "--gamma", "abc"}).code, 2);
    EXPECT_EQ(run_cli({"analyze", "-c", (root / "missing.json").string()}).code, 2);
    EXPECT_EQ(run_cli({"sample", "--kernel", "relu", "--points", "1,0;0,1,0", "--out", root.string()}).code, 2);
    EXPECT_EQ(run_cli({"verify", "--kernel", "relu", "--L", "0,5", "--out", root.string()}).code, 2);
    const auto help = run_cli({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("verify"), std::string::npos);
}

TEST_F(CliTest, CommandLineOverridesConfig) {
    const auto cfg = write("c.json", "{\n  \"kernel\": {\"kind\": \"exp\", \"gamma\": 2}\n}\n");
    const auto r = run_cli({"analyze", "-c", cfg.string(), "--gamma", "0.25"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["regime"], "high-disorder");
}
