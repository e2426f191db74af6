#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "prefopt/report.hpp"

using namespace prefopt;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("prefopt_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

ExperimentReport sample(const std::string& experiment) {
    return {experiment,
            {{experiment, "dpo", 1e-5, 0.0, "all", "tv_to_star", 1000, 0.1, 0},
             {experiment, "dpo", 1.0, 0.0, "all", "tv_to_star", 1000, 1.0 / 3.0, 0},
             {experiment, "typo", 1.0, 0.0, "x", "prob:y_a", 10, 0.6, 0}}};
}

}  // namespace

TEST(Csv, HeaderAndExactValues) {
    const std::string csv = to_csv(sample("interpolation"));
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "experiment,loss,lambda,alpha,partition,metric,epoch,value,seed");
    std::getline(in, line);
    EXPECT_EQ(line, "interpolation,dpo,1.0000000000000001e-05,0,all,tv_to_star,1000,0.10000000000000001,0");
    std::getline(in, line);
    EXPECT_EQ(line, "interpolation,dpo,1,0,all,tv_to_star,1000,0.33333333333333331,0");
    EXPECT_EQ(std::strtod("0.33333333333333331", nullptr), 1.0 / 3.0);
}

TEST(Csv, FieldsAreQuotedWhenNeeded) {
    EXPECT_EQ(detail::csv_field("plain"), "plain");
    EXPECT_EQ(detail::csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(detail::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
}

TEST(Json, RowsSurviveRoundTrip) {
    const auto j = nlohmann::json::parse(to_json(sample("preservation")).dump());
    ASSERT_EQ(j["rows"].size(), 3u);
    EXPECT_EQ(j["rows"][1]["value"].get<double>(), 1.0 / 3.0);
    EXPECT_EQ(j["rows"][2]["metric"], "prob:y_a");
    EXPECT_EQ(j["experiment"], "preservation");
}

TEST(Write, AtomicReplaceLeavesNoTemporary) {
    const fs::path d = scratch("atomic");
    write_atomic(d / "sub" / "a.txt", "one");
    write_atomic(d / "sub" / "a.txt", "two");
    EXPECT_EQ(slurp(d / "sub" / "a.txt"), "two");
    EXPECT_FALSE(fs::exists(d / "sub" / "a.txt.tmp"));
    fs::remove_all(d);
}

TEST(Write, CombinedReportFollowsFixedOrder) {
    const fs::path d = scratch("combined");
    write_report(sample("preservation"), d, ReportFormat::Csv, false);
    write_report(sample("interpolation"), d, ReportFormat::Csv, false);
    const std::string all = slurp(d / "report.csv");
    const std::string interp = slurp(d / "interpolation.csv");
    const std::string pres = slurp(d / "preservation.csv");
    EXPECT_EQ(all, interp + pres.substr(pres.find('\n') + 1));
    // Rewriting one study does not duplicate rows.
    write_report(sample("interpolation"), d, ReportFormat::Csv, false);
    EXPECT_EQ(slurp(d / "report.csv"), all);
    fs::remove_all(d);
}

TEST(Write, JsonFormatAndCharts) {
    const fs::path d = scratch("json");
    const auto files = write_report(sample("interpolation"), d, ReportFormat::Json, true);
    EXPECT_TRUE(fs::exists(d / "interpolation.json"));
    EXPECT_FALSE(fs::exists(d / "report.csv"));
    bool svg = false;
    for (const auto& f : files)
        if (f.extension() == ".svg") {
            svg = true;
            const std::string s = slurp(f);
            EXPECT_EQ(s.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0), 0u);
            EXPECT_EQ(s.find("href"), std::string::npos);
            EXPECT_EQ(s.find("<style"), std::string::npos);
            EXPECT_NE(s.find("<polyline"), std::string::npos);
            EXPECT_NE(s.find("dpo"), std::string::npos);
        }
    EXPECT_TRUE(svg);
    fs::remove_all(d);
}

TEST(Charts, OneChartPerTopLevelDistance) {
    ExperimentReport r = sample("degenerate");
    r.rows.push_back({"degenerate", "dpo", 1.0, 0.0, "ref0~ref1", "tv_between_refs", 1000, 0.01, 0});
    r.rows.push_back({"degenerate", "dpo", 1.0, 0.0, "ref0/all", "tv_to_star", 1000, 0.2, 0});
    const auto charts = report_charts(r);
    EXPECT_EQ(charts.count("degenerate_tv_between_refs_ref0-ref1.svg"), 1u);
    EXPECT_EQ(charts.count("degenerate_tv_to_star_all.svg"), 1u);
    for (const auto& [name, _] : charts) EXPECT_EQ(name.find('/'), std::string::npos);
    EXPECT_EQ(svg_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
}

TEST(Identity, CsvAndJson) {
    const std::vector<IdentityReport> r{make_report("dpo_rewrite(lambda=1)", 100, 1e-16, 1e-10),
                                        make_report("broken", 5, 1.0, 1e-9)};
    const std::string csv = identity_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "name,probes,max_error,threshold,passed");
    EXPECT_NE(csv.find("dpo_rewrite(lambda=1),100,9.9999999999999998e-17,1e-10,true"), std::string::npos);
    EXPECT_NE(csv.find("broken,5,1,1.0000000000000001e-09,false"), std::string::npos);
    const auto j = identity_json(r);
    EXPECT_EQ(j[0]["passed"], true);
    EXPECT_EQ(j[1]["passed"], false);
}
