#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "conveq/conveq.h"

#include <json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

using nlohmann::json;

namespace {

struct Density {
    conveq_density* h = nullptr;
    explicit Density(const char* spec) { REQUIRE(conveq_density_create(spec, &h) == CONVEQ_OK); }
    ~Density() { conveq_density_destroy(h); }
};

std::string take(char* p) {
    std::string s = p ? p : "";
    conveq_string_free(p);
    return s;
}

const char* kPoly2 = R"({"d":1,"profile":{"kind":"polynomial","beta":2}})";
const char* kTemp3 = R"({"d":1,"profile":{"kind":"tempered","m":1,"beta":3}})";

int run(const std::string& args) {
    const std::string cmd = std::string(CONVEQ_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string data(const char* name) { return std::string(CONVEQ_DATA) + "/" + name; }

} // namespace

TEST_CASE("handles and errors") {
    CHECK(std::string(conveq_version()).find('.') != std::string::npos);

    Density f(kPoly2);
    CHECK(conveq_density_dim(f.h) == 1);
    double x = 2.0, v = 0.0;
    REQUIRE(conveq_density_eval(f.h, &x, 1, &v) == CONVEQ_OK);
    CHECK(v == doctest::Approx(0.25));
    REQUIRE(conveq_density_l1_norm(f.h, 1e-10, &v) == CONVEQ_OK);
    CHECK(v == doctest::Approx(4.0).epsilon(1e-9));

    char* spec = nullptr;
    REQUIRE(conveq_density_spec(f.h, &spec) == CONVEQ_OK);
    const json j = json::parse(take(spec));
    CHECK(j["eta"]["kind"] == "constant");
    CHECK(j.contains("value_at_zero"));
    Density again(j.dump().c_str());
    REQUIRE(conveq_density_eval(again.h, &x, 1, &v) == CONVEQ_OK);
    CHECK(v == doctest::Approx(0.25));

    conveq_density* h = nullptr;
    CHECK(conveq_density_create("{not json", &h) == CONVEQ_ERR_INVALID_INPUT);
    CHECK(h == nullptr);
    CHECK(std::string(conveq_last_error()).size() > 0);
    CHECK(conveq_density_create(R"({"d":1,"profile":{"kind":"polynomial","beta":0.5}})", &h) ==
          CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_density_create(R"({"d":1,"profile":{"kind":"polynomial","beta":2},"extra":1})", &h) ==
          CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_density_create(nullptr, &h) == CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_density_eval(nullptr, &x, 1, &v) == CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_density_eval(f.h, &x, 2, &v) == CONVEQ_ERR_INVALID_INPUT);

    // a success clears the message; other threads keep their own
    REQUIRE(conveq_density_eval(f.h, &x, 1, &v) == CONVEQ_OK);
    CHECK(std::string(conveq_last_error()).empty());
    std::string other;
    std::thread([&] {
        conveq_density* g = nullptr;
        conveq_density_create("[]", &g);
        other = conveq_last_error();
    }).join();
    CHECK_FALSE(other.empty());
    CHECK(std::string(conveq_last_error()).empty());
}

TEST_CASE("kcurve and classify") {
    Density f(kTemp3);
    char *csv = nullptr, *summary = nullptr;
    REQUIRE(conveq_kcurve(f.h, nullptr, &csv, &summary) == CONVEQ_OK);
    const std::string c = take(csv);
    const json s = json::parse(take(summary));
    CHECK(c.find("r,k_estimate,stabilization_indicator\n") != std::string::npos);
    CHECK(c.find("# config: ") != std::string::npos);
    CHECK(s["fitted_slope"].get<double>() == doctest::Approx(-2.0).epsilon(0.075));
    CHECK(s["config"]["t_max"] == 2048.0);
    CHECK(s["density"]["profile"]["beta"] == 3.0);
    CHECK(conveq_kcurve(f.h, R"({"r_grid":[8]})", &csv, &summary) == CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_kcurve(f.h, R"({"r_gird":[8]})", &csv, &summary) == CONVEQ_ERR_INVALID_INPUT);

    conveq_verdict verdict{};
    char* report = nullptr;
    REQUIRE(conveq_classify(f.h, R"({"theta":[1],"gamma":"auto"})", &verdict, &report) == CONVEQ_OK);
    const json r = json::parse(take(report));
    CHECK(verdict == CONVEQ_MEMBER);
    CHECK(r["report"]["verdict"] == "MEMBER");
    CHECK(r["config"]["theta"] == json::array({1.0}));
    CHECK(r["version"] == conveq_version());
    CHECK(conveq_classify(f.h, R"({"theta":[1,0]})", &verdict, &report) == CONVEQ_ERR_INVALID_INPUT);
}

TEST_CASE("cpoisson, conv and sample") {
    Density f(kPoly2);
    int pass = 0;
    char *ev = nullptr, *hist = nullptr;
    const char* small = R"({"lambda":1,"half_width":256,"n_per_axis":8192,"mc_samples":100000,"seed":3})";
    REQUIRE(conveq_cpoisson(f.h, small, &pass, &ev, &hist) == CONVEQ_OK);
    const json e = json::parse(take(ev));
    const std::string h1 = take(hist);
    CHECK(pass == 1);
    CHECK(e["all_pass"] == true);
    CHECK(e["checks"]["selfconv_identity"]["status"] == "PASS");
    CHECK(e["checks"]["inheritance"]["status"] == "PASS");
    CHECK(e["checks"]["monte_carlo"]["status"] == "PASS");
    CHECK(e["gamma"]["value"] == 0.0);
    CHECK(h1.find("bin_lo_0,bin_hi_0,count,expected,z_score") != std::string::npos);
    REQUIRE(conveq_cpoisson(f.h, small, &pass, &ev, &hist) == CONVEQ_OK);
    conveq_string_free(ev);
    CHECK(take(hist) == h1);

    REQUIRE(conveq_cpoisson(f.h, R"({"half_width":64,"n_per_axis":2048})", &pass, &ev, &hist) == CONVEQ_OK);
    conveq_string_free(ev);
    CHECK(hist == nullptr);
    CHECK(conveq_cpoisson(f.h, R"({"lambda":0})", &pass, &ev, &hist) == CONVEQ_ERR_INVALID_INPUT);
    CHECK(conveq_cpoisson(f.h, R"({"gamma":"soon"})", &pass, &ev, &hist) == CONVEQ_ERR_INVALID_INPUT);

    char* csv = nullptr;
    REQUIRE(conveq_conv(f.h, R"({"order":2,"half_width":16,"n_per_axis":256})", &csv) == CONVEQ_OK);
    const std::string cv = take(csv);
    CHECK(cv.find("x,value,error,trusted\n") != std::string::npos);

    REQUIRE(conveq_sample(f.h, R"({"n_samples":500,"seed":9})", &csv) == CONVEQ_OK);
    const std::string s1 = take(csv);
    REQUIRE(conveq_sample(f.h, R"({"n_samples":500,"seed":9})", &csv) == CONVEQ_OK);
    CHECK(take(csv) == s1);
    std::size_t lines = 0;
    for (char ch : s1) lines += ch == '\n';
    CHECK(lines == 500 + 3);  // two comments and the header
    CHECK(conveq_sample(f.h, R"({"n_samples":"many"})", &csv) == CONVEQ_ERR_INVALID_INPUT);
}

TEST_CASE("cli exit codes") {
    CHECK(run("classify --density " + data("tempered_d2_b2.json") + " --theta 1,0") == 0);
    CHECK(run("classify --density " + data("tempered_d2_b1.json") + " --theta 1,0") == 1);
    CHECK(run("classify --density " + data("tempered_d2_b2.json")) == 64);
    CHECK(run("classify --density /nonexistent.json --theta 1,0") == 64);
    CHECK(run("kcurve --density " + data("tempered_d1_b3.json") + " --r-grid 8") == 64);
    CHECK(run("cpoisson --density " + data("tempered_d1_b3.json") + " --lambda 0") == 64);
    CHECK(run("cpoisson --density " + data("tempered_d1_b3.json") + " --gamma soon") == 64);
    CHECK(run("frobnicate") == 64);
}

TEST_CASE("cli artifacts") {
    const std::string dir = CONVEQ_TMP;
    REQUIRE(run("kcurve --density " + data("polynomial_d1_b3.json") + " -o " + dir + "/k.csv") == 0);
    const json side = json::parse(slurp(dir + "/k.csv.json"));
    CHECK(side["fitted_slope"].get<double>() == doctest::Approx(-2.0).epsilon(0.075));
    CHECK(side["version"] == conveq_version());

    const std::string cp = "cpoisson --density " + data("tempered_d1_b3.json") +
                           " --lambda 1 --gamma auto --mc-samples 1e5 --seed 42";
    REQUIRE(run(cp + " -o " + dir + "/e1.json --histogram " + dir + "/h1.csv") == 0);
    REQUIRE(run(cp + " -o " + dir + "/e2.json --histogram " + dir + "/h2.csv") == 0);
    CHECK(slurp(dir + "/h1.csv") == slurp(dir + "/h2.csv"));
    CHECK(slurp(dir + "/e1.json") == slurp(dir + "/e2.json"));
    const json e = json::parse(slurp(dir + "/e1.json"));
    CHECK(e["all_pass"] == true);
    CHECK(e["config"]["mc_samples"] == 100000);

    // --config overrides flags
    std::ofstream(dir + "/cfg.json") << R"({"n_samples": 5, "seed": 1})";
    REQUIRE(run("sample --density " + data("tempered_d1_b3.json") + " -n 100 --config " + dir + "/cfg.json -o " +
                dir + "/s.csv") == 0);
    const std::string s = slurp(dir + "/s.csv");
    CHECK(s.find("\"n_samples\":5") != std::string::npos);
}
