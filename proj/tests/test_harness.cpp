#include "doctest.h"

#include "fixtures.hpp"
#include "pglab/cli.hpp"
#include "pglab/experiment.hpp"
#include "pglab/io.hpp"
#include "pglab/svg_plot.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace pglab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("pglab_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

int count(const std::string& text, const std::string& needle) {
    int n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

} // namespace

TEST_CASE("mdp text round trip is exact") {
    for (std::uint64_t seed : {1u, 7u, 99u}) {
        const TabularMdp mdp = random_mdp(seed, 6, 4, 0.95);
        std::stringstream buffer;
        write_mdp(buffer, mdp);
        const TabularMdp back = read_mdp(buffer);
        CHECK(back.gamma() == mdp.gamma());
        CHECK(back.reward() == mdp.reward());
        CHECK(back.transition() == mdp.transition());
        CHECK(mdp_fingerprint(back) == mdp_fingerprint(mdp));
        CHECK(format_mdp(back) == format_mdp(mdp));
    }
    CHECK(mdp_fingerprint(random_mdp(1, 3, 2, 0.9)) != mdp_fingerprint(random_mdp(2, 3, 2, 0.9)));
    CHECK(mdp_fingerprint(two_arm_bandit()).size() == 16);
}

TEST_CASE("mdp reader rejects malformed text") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return read_mdp(in);
    };
    CHECK_THROWS_AS(parse(""), IoError);
    CHECK_THROWS_AS(parse("pglab-mdp 2\n"), IoError);
    CHECK_THROWS_AS(parse("pglab-mdp 1\nn_states 1\nn_actions 2\ngamma 0.5\nreward\n1 0\ntransition\n1\n"), IoError);
    CHECK_THROWS_AS(parse("pglab-mdp 1\nn_states 1\nn_actions 1\ngamma 0.5\nreward\nx\ntransition\n1\n"), IoError);
    CHECK_THROWS_AS(parse("pglab-mdp 1\nn_states 1\nn_actions 1\ngamma 1.5\nreward\n1\ntransition\n1\n"),
                    InvalidArgument);
    CHECK_THROWS_AS(parse("pglab-mdp 1\nn_states 1\nn_actions 1\ngamma 0.5\nreward\n1\ntransition\n0.5\n"),
                    InvalidArgument);
    CHECK_NOTHROW(parse("pglab-mdp 1\nn_states 1\nn_actions 1\ngamma 0.5\nreward\n1\ntransition\n1\n"));
    CHECK_THROWS_AS(load_mdp("/nonexistent/dir/x.mdp"), IoError);
}

TEST_CASE("format_double reads back exactly") {
    SplitMix64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-300.0, 300.0));
        CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(-0.0) == "0");
    CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("trace csv round trip is exact") {
    ExperimentConfig config;
    config.mdp.kind = MdpSource::Kind::random;
    config.mdp.n_states = 5;
    config.mdp.n_actions = 3;
    config.method = Method::softmax_pg;
    config.schedule = StepSchedule::constant(0.7);
    config.max_iters = 25;
    const auto result = run_experiment(config);

    std::stringstream buffer;
    write_trace_csv(buffer, result.trace);
    const std::string first = buffer.str();
    const Trace back = read_trace_csv(buffer);
    CHECK(back.meta.method == Method::softmax_pg);
    CHECK(back.meta.schedule.eta == 0.7);
    CHECK(back.meta.gamma == result.trace.meta.gamma);
    CHECK(back.meta.delta == result.trace.meta.delta);
    CHECK(back.meta.fingerprint == result.trace.meta.fingerprint);
    CHECK(back.meta.checks == result.trace.meta.checks);
    REQUIRE(back.records.size() == result.trace.records.size());
    for (std::size_t i = 0; i < back.records.size(); ++i) {
        const auto& a = back.records[i];
        const auto& b = result.trace.records[i];
        CHECK(a.k == b.k);
        CHECK(a.eta_k == b.eta_k);
        CHECK(a.v_gap_inf == b.v_gap_inf);
        CHECK(a.v_gap_rho == b.v_gap_rho);
        CHECK(a.l_k_kp1 == b.l_k_kp1);
        CHECK(a.b_max == b.b_max);
        CHECK(a.kappa_est == b.kappa_est);
        CHECK(a.slacks == b.slacks);
    }
    std::stringstream again;
    write_trace_csv(again, back);
    CHECK(again.str() == first);

    for (const auto& name : back.meta.checks) {
        const auto r1 = check_inequality(name, back);
        const auto r2 = check_inequality(name, result.trace);
        CHECK(r1.status == r2.status);
        CHECK(r1.min_slack == r2.min_slack);
    }
}

TEST_CASE("trace csv layout") {
    ExperimentConfig config;
    config.method = Method::softmax_npg;
    config.schedule = StepSchedule::constant(std::log(2.0));
    config.max_iters = 3;
    config.checks = std::vector<std::string>{"monotone", "npg-identity1"};
    std::stringstream buffer;
    write_trace_csv(buffer, run_experiment(config).trace);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(buffer, line)) lines.push_back(line);
    std::size_t header = 0;
    while (header < lines.size() && lines[header].rfind("#", 0) == 0) ++header;
    REQUIRE(header < lines.size());
    CHECK(lines[0].rfind("# ", 0) == 0);
    CHECK(lines[header] ==
          "k,eta_k,v_gap_inf,v_gap_rho,l_k_kp1,b_max,kappa_est,kl_to_opt,slack:monotone,slack:npg-identity1");
    CHECK(lines.size() == header + 5);
    CHECK(lines[header + 1].rfind("0,", 0) == 0);
    CHECK(lines[header + 4].rfind("3,,", 0) == 0);

    std::istringstream bad("k,eta_k\n0,1\n");
    CHECK_THROWS_AS(read_trace_csv(bad), IoError);
}

TEST_CASE("identical configs give byte-identical trace files") {
    TempDir dir;
    ExperimentConfig config;
    config.mdp.kind = MdpSource::Kind::random;
    config.method = Method::entropy_npg;
    config.tau = 0.1;
    config.schedule = StepSchedule::constant(2.0);
    config.max_iters = 30;
    save_trace_csv(dir.file("a.csv"), run_experiment(config).trace);
    save_trace_csv(dir.file("b.csv"), run_experiment(config).trace);
    CHECK(slurp(dir.file("a.csv")) == slurp(dir.file("b.csv")));
    CHECK_FALSE(slurp(dir.file("a.csv")).empty());
}

TEST_CASE("config validation") {
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    c.max_iters = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.method = Method::soft_pi;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c.tau = 0.1;
    CHECK_NOTHROW(c.validate());
    c = {};
    c.tau = 0.1;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.method = Method::ppg;
    c.schedule.kind = ScheduleKind::pg_adaptive;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.schedule.kind = ScheduleKind::ppg_increasing;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.checks = std::vector<std::string>{"nope"};
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("json config") {
    const auto j = nlohmann::json::parse(R"({
        "mdp": {"random": {"seed": 3, "states": 4, "actions": 2, "gamma": 0.8}},
        "method": "entropy_npg",
        "schedule": {"kind": "constant", "eta": 5},
        "tau": 0.2,
        "max_iters": 12,
        "stop_gap": 1e-9,
        "checks": ["monotone", "kl-sandwich"],
        "keep_policies": true
    })");
    const ExperimentConfig c = config_from_json(j);
    CHECK(c.mdp.kind == MdpSource::Kind::random);
    CHECK(c.mdp.seed == 3);
    CHECK(c.mdp.n_states == 4);
    CHECK(c.mdp.gamma == 0.8);
    CHECK(c.method == Method::entropy_npg);
    CHECK(c.schedule.eta == 5.0);
    CHECK(c.tau == 0.2);
    CHECK(c.max_iters == 12);
    CHECK(c.stop_gap == 1e-9);
    CHECK(c.checks->size() == 2);
    CHECK(c.keep_policies);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"method": "sgd"})")), InvalidArgument);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("stop_gap met at the start gives only the first record") {
    ExperimentConfig c;
    c.stop_gap = 10.0;
    const auto result = run_experiment(c);
    REQUIRE(result.trace.records.size() == 1);
    CHECK(result.trace.records[0].k == 0);
    CHECK_FALSE(result.trace.records[0].l_k_kp1.has_value());
}

TEST_CASE("runs on the bandit reproduce the NPG gap sequence") {
    ExperimentConfig c;
    c.method = Method::softmax_npg;
    c.schedule = StepSchedule::constant(std::log(2.0));
    c.max_iters = 5;
    const auto result = run_experiment(c);
    const double expected[] = {0.5, 1.0 / 3.0, 0.2, 1.0 / 9.0, 1.0 / 17.0, 1.0 / 33.0};
    REQUIRE(result.trace.records.size() == 6);
    for (int k = 0; k <= 5; ++k) CHECK(result.trace.records[k].v_gap_inf == doctest::Approx(expected[k]).epsilon(1e-13));
    CHECK(result.final_policy.has_value());
}

TEST_CASE("svg output") {
    PlotSeries a{"a", {0, 1, 2}, {1.0, 0.1, 0.0}, false};
    PlotSeries b{"b", {0, 1, 2}, {1.0, 0.5, 0.25}, true};
    PlotOptions options;
    options.title = "gaps & <rates>";
    const std::string svg = render_svg({a, b}, options);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(contains(svg, "</svg>"));
    CHECK(count(svg, "<polyline") == 2);
    CHECK(contains(svg, "stroke-dasharray"));
    CHECK(contains(svg, "gaps &amp; &lt;rates&gt;"));
    CHECK_FALSE(contains(svg, "nan"));
    CHECK_FALSE(contains(svg, "inf"));
}

TEST_CASE("cli gen") {
    TempDir dir;
    const auto r = cli({"gen", "--random", "--seed", "7", "--states", "4", "--actions", "3", "-o", dir.file("m.mdp")});
    CHECK(r.code == kExitOk);
    const TabularMdp mdp = load_mdp(dir.file("m.mdp"));
    CHECK(r.out == "wrote " + dir.file("m.mdp") + " fingerprint " + mdp_fingerprint(random_mdp(7, 4, 3, 0.9)) + "\n");
    CHECK(mdp.n_states() == 4);

    CHECK(cli({"gen", "--random", "--gamma", "1", "-o", dir.file("x.mdp")}).code == kExitUsage);
    CHECK_FALSE(fs::exists(dir.file("x.mdp")));
    CHECK(cli({"gen", "--random", "--bandit", "-o", dir.file("y.mdp")}).code == kExitUsage);
    CHECK(cli({"gen", "--random"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("cli run") {
    TempDir dir;
    const auto r = cli({"run", "--bandit", "--method", "npg", "--eta", "0.6931471805599453", "--max-iters",
                        "5", "-o", dir.file("t.csv")});
    CHECK(r.code == kExitOk);
    CHECK(contains(r.out, "npg-identity1 min_slack="));
    CHECK_FALSE(contains(r.out, "FAIL"));
    CHECK(contains(r.out, "npg k=5 v_gap_inf="));
    const Trace t = load_trace_csv(dir.file("t.csv"));
    CHECK(t.records.back().v_gap_inf == doctest::Approx(1.0 / 33.0).epsilon(1e-12));

    const auto piped = cli({"run", "--bandit", "--method", "pi", "--max-iters", "2"});
    CHECK(piped.code == kExitOk);
    CHECK(piped.out.rfind("# ", 0) == 0);
    CHECK(contains(piped.err, "pi k="));

    std::ofstream(dir.file("c.json")) << R"({"mdp": "bandit", "method": "soft_pi", "tau": 0.5, "max_iters": 4})";
    const auto from_config = cli({"run", "--config", dir.file("c.json"), "--max-iters", "2", "-o", dir.file("c.csv")});
    CHECK(from_config.code == kExitOk);
    CHECK(load_trace_csv(dir.file("c.csv")).records.size() == 3);

    CHECK(cli({"run", "--method", "soft_pi"}).code == kExitUsage);
    CHECK(cli({"run", "--method", "newton"}).code == kExitUsage);
    CHECK(cli({"run", "--mdp", dir.file("missing.mdp")}).code == kExitUsage);
    CHECK(cli({"run", "--check", "nope"}).code == kExitUsage);
    CHECK(cli({"run", "--config", dir.file("missing.json")}).code == kExitUsage);
}

TEST_CASE("cli run on an mdp file") {
    TempDir dir;
    REQUIRE(cli({"gen", "--random", "--seed", "2", "--states", "5", "--actions", "3", "-o", dir.file("m.mdp")}).code ==
            kExitOk);
    const auto r = cli({"run", "--mdp", dir.file("m.mdp"), "--method", "ppg", "--eta", "3", "--max-iters", "20", "-o",
                        dir.file("t.csv")});
    CHECK(r.code == kExitOk);
    CHECK(load_trace_csv(dir.file("t.csv")).meta.fingerprint == mdp_fingerprint(random_mdp(2, 5, 3, 0.9)));
}

TEST_CASE("cli verify") {
    TempDir dir;
    const auto soft = cli({"verify", "--random", "--seed", "3", "--method", "soft_pi", "--tau", "0.1", "--max-iters",
                           "20", "--check", "softpi-quadratic"});
    CHECK(soft.code == kExitOk);
    CHECK(soft.out.rfind("softpi-quadratic min_slack=", 0) == 0);
    CHECK(contains(soft.out, " pass"));

    const auto pg = cli({"verify", "--random", "--method", "softmax_pg", "--eta", "1", "--max-iters", "30", "--check",
                         "pg-identity"});
    CHECK(pg.code == kExitOk);
    CHECK(contains(pg.out, "pg-identity min_slack="));

    REQUIRE(cli({"run", "--random", "--method", "npg", "--max-iters", "10", "-o", dir.file("n.csv")}).code ==
            kExitOk);
    const auto skipped = cli({"verify", dir.file("n.csv"), "--check", "softpi-quadratic"});
    CHECK(skipped.code == kExitOk);
    CHECK(skipped.out == "softpi-quadratic skipped: incompatible\n");

    const auto all = cli({"verify", dir.file("n.csv")});
    CHECK(all.code == kExitOk);
    CHECK(count(all.out, "\n") == static_cast<int>(load_trace_csv(dir.file("n.csv")).meta.checks.size()));

    CHECK(cli({"verify", dir.file("n.csv"), "--check", "nope"}).code == kExitUsage);
    CHECK(cli({"verify"}).code == kExitUsage);
    CHECK(cli({"verify", dir.file("n.csv"), "--random"}).code == kExitUsage);
    CHECK(cli({"verify", dir.file("missing.csv")}).code == kExitUsage);
}

TEST_CASE("cli verify exits 2 on a violated check") {
    TempDir dir;
    REQUIRE(cli({"run", "--random", "--method", "npg", "--max-iters", "6", "--check", "monotone", "-o",
                 dir.file("t.csv")})
                .code == kExitOk);
    Trace t = load_trace_csv(dir.file("t.csv"));
    t.records[3].slacks["monotone"] = -0.25;
    save_trace_csv(dir.file("bad.csv"), t);
    const auto r = cli({"verify", dir.file("bad.csv")});
    CHECK(r.code == kExitViolation);
    CHECK(contains(r.out, "monotone min_slack=-2.500000e-01 argmin_k=3 FAIL first_violation_k=3"));
}

TEST_CASE("cli exits 3 on a non-finite iterate") {
    const auto r = cli({"run", "--random", "--method", "softmax_pg", "--eta", "1.7e308", "--max-iters", "50"});
    CHECK(r.code == kExitNumeric);
    CHECK(contains(r.err, "non-finite"));
    CHECK(r.out.rfind("# ", 0) == 0);
    const auto p = cli({"run", "--random", "--method", "ppg", "--eta", "1e308", "--max-iters", "50"});
    CHECK(p.code == kExitNumeric);
    CHECK(contains(p.err, "non-finite"));
}

TEST_CASE("cli rate") {
    TempDir dir;
    std::ofstream(dir.file("toy.csv")) << "# method=pi\n# gamma=0.5\n"
                                       << "k,eta_k,v_gap_inf,v_gap_rho,l_k_kp1,b_max,kappa_est,kl_to_opt\n"
                                       << "0,,1,1,,,,\n1,,0.5,0.5,,,,\n2,,0.25,0.25,,,,\n3,,0.125,0.125,,,,\n";
    const auto r = cli({"rate", dir.file("toy.csv"), "--model", "linear", "--lo", "0"});
    CHECK(r.code == kExitOk);
    double rate = 0.0;
    double residual = 1.0;
    int lo = -1;
    int hi = -1;
    REQUIRE(std::sscanf(r.out.c_str(), "linear rate=%lf residual=%lf window=[%d,%d]", &rate, &residual, &lo, &hi) == 4);
    CHECK(rate == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(residual <= 1e-14);
    CHECK(lo == 0);
    CHECK(hi == 3);
    const auto dflt = cli({"rate", dir.file("toy.csv")});
    CHECK(dflt.out.rfind("linear rate=0.50000000000000", 0) == 0);
    CHECK(contains(dflt.out, "window=[2,3]"));
    CHECK(cli({"rate", dir.file("toy.csv"), "--model", "cubic"}).code == kExitUsage);
    CHECK(cli({"rate", dir.file("toy.csv"), "--column", "l1"}).code == kExitUsage);
    CHECK(cli({"rate", dir.file("toy.csv"), "--lo", "9"}).code == kExitUsage);
}

TEST_CASE("cli plot") {
    TempDir dir;
    REQUIRE(cli({"run", "--random", "--method", "soft_pi", "--tau", "0.1", "--max-iters", "10", "-o",
                 dir.file("a.csv")})
                .code == kExitOk);
    REQUIRE(cli({"run", "--random", "--method", "entropy_npg", "--tau", "0.1", "--eta", "10", "--max-iters", "10",
                 "-o", dir.file("b.csv")})
                .code == kExitOk);
    const auto two = cli({"plot", dir.file("a.csv"), dir.file("b.csv"), "-o", dir.file("two.svg")});
    CHECK(two.code == kExitOk);
    CHECK(two.out == "wrote " + dir.file("two.svg") + " with 2 curves\n");
    CHECK(count(slurp(dir.file("two.svg")), "<polyline") == 2);

    const auto env = cli({"plot", dir.file("b.csv"), "-o", dir.file("env.svg"), "--envelopes"});
    CHECK(env.out == "wrote " + dir.file("env.svg") + " with 4 curves\n");
    CHECK(count(slurp(dir.file("env.svg")), "<polyline") == 4);

    CHECK(cli({"plot", dir.file("missing.csv"), "-o", dir.file("m.svg")}).code == kExitUsage);
}

TEST_CASE("cli sweep") {
    TempDir dir;
    const std::string prefix = dir.file("s");
    const auto r = cli({"sweep", "--random", "--method", "softmax_pg", "--max-iters", "15", "--etas", "0.1", "1", "10",
                        "--prefix", prefix});
    CHECK(r.code == kExitOk);
    CHECK(count(r.out, "\n") == 3);
    for (const std::string tag : {"0.1", "1", "10"}) {
        const std::string path = prefix + "_eta" + tag + ".csv";
        REQUIRE(fs::exists(path));
        const Trace t = load_trace_csv(path);
        CHECK(t.meta.schedule.eta == std::stod(tag));

        ExperimentConfig c;
        c.mdp.kind = MdpSource::Kind::random;
        c.method = Method::softmax_pg;
        c.schedule = StepSchedule::constant(std::stod(tag));
        c.max_iters = 15;
        std::ostringstream direct;
        write_trace_csv(direct, run_experiment(c).trace);
        CHECK(slurp(path) == direct.str());
    }
    CHECK(cli({"sweep", "--random"}).code == kExitUsage);
}
