#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>

#include "d2g/cli/config.hpp"
#include "d2g/pairgen/pairgen.hpp"

using namespace d2g;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(D2G_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("config: defaults fill a minimal document") {
    ExperimentConfig cfg = validate_config(json::object());
    REQUIRE(cfg.num("distill.lambda_gan") == 0.25);
    REQUIRE(cfg.integer("distill.r1_interval") == 16);
    REQUIRE(cfg.num("distill.ema_beta") < 1.0);
    REQUIRE(cfg.str("teacher.schedule") == "vp_cosine");

    // partial documents override only their keys
    ExperimentConfig c2 = validate_config(json{{"distill", {{"steps", 7}}}});
    REQUIRE(c2.integer("distill.steps") == 7);
    REQUIRE(c2.num("distill.lambda_gan") == 0.25);
}

TEST_CASE("config: every violation is reported with its key path") {
    json bad = {{"distill", {{"lambda_gan", -1.0}, {"bogus_key", 1}}},
                {"unknown_section", 2},
                {"pairs", {{"count", 0}}}};
    try {
        validate_config(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(e.violations.size() == 4);
        std::string all;
        for (const auto& v : e.violations) all += v + "\n";
        REQUIRE(all.find("distill.lambda_gan") != std::string::npos);
        REQUIRE(all.find("distill.bogus_key") != std::string::npos);
        REQUIRE(all.find("unknown_section") != std::string::npos);
        REQUIRE(all.find("pairs.count") != std::string::npos);
    }
    // single range violation names its full path
    try {
        validate_config(json{{"pairs", {{"count", 0}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(e.violations.size() == 1);
        REQUIRE(e.violations[0].find("pairs.count") != std::string::npos);
    }
}

TEST_CASE("config: parse -> serialize -> parse round trip") {
    auto dir = std::filesystem::temp_directory_path() / "d2g_cfg_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "a.json");
        f << R"({"seed": 9, "distill": {"loss": "mse", "steps": 11}})";
    }
    ExperimentConfig a = parse_config(dir / "a.json");
    {
        std::ofstream f(dir / "b.json");
        f << a.doc.dump(2);
    }
    ExperimentConfig b = parse_config(dir / "b.json");
    REQUIRE(a.doc == b.doc);

    REQUIRE_THROWS_AS(parse_config(dir / "missing.json"), ConfigError);
    {
        std::ofstream f(dir / "syntax.json");
        f << "{not json";
    }
    REQUIRE_THROWS_AS(parse_config(dir / "syntax.json"), ConfigError);
}

TEST_CASE("config: dotted overrides") {
    ExperimentConfig cfg = validate_config(json::object());
    ExperimentConfig out = apply_overrides(cfg, {"distill.lr=0.01", "data.classes=6",
                                                 "distill.loss=mse", "deterministic=false"});
    REQUIRE(out.num("distill.lr") == 0.01);
    REQUIRE(out.integer("data.classes") == 6);
    REQUIRE(out.str("distill.loss") == "mse");
    REQUIRE_FALSE(out.flag("deterministic"));

    REQUIRE_THROWS_AS(apply_overrides(cfg, {"no_such.key=1"}), ConfigError);
    REQUIRE_THROWS_AS(apply_overrides(cfg, {"distill.lambda_gan=-2"}), ConfigError);
    REQUIRE_THROWS_AS(apply_overrides(cfg, {"missing-equals"}), ConfigError);
}

TEST_CASE("cli: exit codes distinguish config and dependency failures") {
    auto dir = std::filesystem::temp_directory_path() / "d2g_cli_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    // dependency error: eval with no artifacts at all
    REQUIRE(run_cli("--out " + (dir / "empty").string() + " eval") == 3);

    // config error: malformed config file
    {
        std::ofstream f(dir / "bad.json");
        f << R"({"distill": {"lambda_gan": -3}})";
    }
    REQUIRE(run_cli("--config " + (dir / "bad.json").string() + " eval") == 2);

    // config error: bad override
    REQUIRE(run_cli("--set distill.loss=nonsense --out " + dir.string() + " eval") == 2);
}

TEST_CASE("cli: rewire runs end to end through the binary") {
    auto dir = std::filesystem::temp_directory_path() / "d2g_cli_rewire";
    std::filesystem::create_directories(dir);

    Rng rng(3);
    TeacherModel m = analytic_gaussian_teacher(rng.gaussian(1, 2, 4, 4), 0.5,
                                               make_schedule(ScheduleKind::vp_cosine, 50));
    PairGenConfig pc;
    pc.solver.steps = 4;
    auto shards = generate_pairs(m, 6, pc, 2, 4, 4);
    write_shard(dir / "in.d2gp", shards[0]);

    int rc = run_cli("rewire --in " + (dir / "in.d2gp").string() + " --seed 5 --rewire-out " +
                     (dir / "out.d2gp").string());
    REQUIRE(rc == 0);
    PairShard out = read_shard(dir / "out.d2gp");
    REQUIRE(out.header.rewired);
    REQUIRE(out.header.count == 6);
}
