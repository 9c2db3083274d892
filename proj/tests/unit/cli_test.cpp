#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "errlens_cli.hpp"
#include "test_support.hpp"

using namespace errlens;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  CliTest() {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("errlens-cli-" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  ~CliTest() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& content) {
    const auto p = dir_ / name;
    std::ofstream(p) << content;
    return p.string();
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  // Two systems over six segments; system A copies the reference.
  std::string corpus() {
    std::string s;
    const std::vector<std::string> refs = {"a b c d e", "the cat sat on the mat", "one two three four",
                                           "red green blue", "x y z w", "p q r s t u"};
    for (std::size_t i = 0; i < refs.size(); ++i) {
      auto bad = text::words(refs[i]);
      bad[i % bad.size()] = "oops";
      s += nlohmann::json{{"id", std::to_string(i)}, {"ref", refs[i]}, {"hyp", refs[i]}, {"system", "A"}}.dump() + "\n";
      s += nlohmann::json{{"id", std::to_string(i)}, {"ref", refs[i]}, {"hyp", text::join(bad)}, {"system", "B"}}.dump() +
           "\n";
    }
    return write("samples.jsonl", s);
  }

  std::string darr() {
    std::string s = "segment_id\tbetter_system\tworse_system\n";
    for (int i = 0; i < 6; ++i) s += std::to_string(i) + "\tA\tB\n";
    return write("darr.tsv", s);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ScoreIdentityCorpusIsZero) {
  std::string s;
  for (int i = 0; i < 5; ++i)
    s += nlohmann::json{{"id", std::to_string(i)}, {"ref", "w" + std::to_string(i) + " a b c"},
                        {"hyp", "w" + std::to_string(i) + " a b c"}}
             .dump() +
         "\n";
  const auto samples = write("id.jsonl", s);
  const auto r = run({"score", "--samples", samples, "--backend", "ngram"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("final_score").get<double>(), 0.0);
    EXPECT_EQ(j.at("dist_exp").get<double>(), 0.0);
    EXPECT_EQ(j.at("dist_imp").get<double>(), 0.0);
    EXPECT_FALSE(j.contains("trace"));
    ++n;
  }
  EXPECT_EQ(n, 5);
}

TEST_F(CliTest, ScoreWritesReportsThatLoadBack) {
  const auto r = run({"score", "--samples", corpus(), "--trace", "--jobs", "2", "--out", path("r.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto reports = io::load_reports(fs::path(path("r.jsonl")));
  ASSERT_EQ(reports.size(), 12u);
  for (const auto& rep : reports) {
    EXPECT_EQ(rep.final_score == 0.0, rep.system == "A") << rep.system << " " << rep.id;
  }
}

TEST_F(CliTest, RefineTracePrintsAcceptedSubstitution) {
  const auto r = run({"refine", "--ref", "a b c d", "--hyp", "a b X d", "--variant", "precision", "--trace"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  const auto& first = j.at("iterations").at(0);
  ASSERT_FALSE(first.at("chosen_edit").is_null());
  EXPECT_EQ(first.at("chosen_edit").at("kind"), "substitute");
  EXPECT_EQ(j.at("final_text"), "a b c d");

  const auto plain = run({"refine", "--ref", "a b c d", "--hyp", "a b X d", "--variant", "precision"});
  EXPECT_EQ(plain.out, "a b c d\n");
}

TEST_F(CliTest, MetaEvalIsReproducible) {
  const auto samples = corpus();
  ASSERT_EQ(run({"score", "--samples", samples, "--out", path("errlens.jsonl")}).code, 0);
  ASSERT_EQ(run({"score", "--samples", samples, "--weights", "1:1", "--out", path("flat.jsonl")}).code, 0);
  const std::vector<std::string> args = {"meta-eval", "--scores", path("flat.jsonl"), "--scores", path("errlens.jsonl"),
                                         "--judgments", darr(), "--bootstrap", "200", "--seed", "17",
                                         "--dataset", "toy"};
  const auto a = run(args);
  const auto b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find('\n')), "metric\tdataset\tstatistic\tn\tp_value");
  EXPECT_NE(a.out.find("errlens\ttoy\t1\t6\t"), std::string::npos);

  auto json_args = args;
  json_args.insert(json_args.end(), {"--format", "json"});
  const auto j = nlohmann::json::parse(run(json_args).out);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_TRUE(j[0].at("p_value").is_null());
  EXPECT_TRUE(j[1].at("p_value").is_number());
}

TEST_F(CliTest, MetaEvalFromMqmWithTopk) {
  ASSERT_EQ(run({"score", "--samples", corpus(), "--out", path("m.jsonl")}).code, 0);
  std::string mqm = "system\tsegment_id\tscore\n";
  for (int i = 0; i < 6; ++i) mqm += "A\t" + std::to_string(i) + "\t0\nB\t" + std::to_string(i) + "\t-5\n";
  const auto r = run({"meta-eval", "--scores", path("m.jsonl"), "--mqm", write("mqm.tsv", mqm), "--topk", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\t1\t6\t"), std::string::npos);
  EXPECT_EQ(run({"meta-eval", "--scores", path("m.jsonl"), "--judgments", darr(), "--topk", "2"}).code, 1);
}

TEST_F(CliTest, SweepReusesReports) {
  ASSERT_EQ(run({"score", "--samples", corpus(), "--out", path("s.jsonl")}).code, 0);
  const auto r = run({"sweep", "--scores", path("s.jsonl"), "--judgments", darr(), "--sweep", "1.0,1.1,...,1.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "ratio\tstatistic\tn\terror");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"score"}).code, 1);
  EXPECT_EQ(run({"score", "--samples", path("missing.jsonl")}).code, 1);
  EXPECT_EQ(run({"score", "--samples", write("bad.jsonl", "{nope\n")}).code, 2);
  EXPECT_EQ(run({"score", "--samples", corpus(), "--k", "0"}).code, 1);
  EXPECT_EQ(run({"refine", "--hyp", "a"}).code, 1);
  EXPECT_EQ(run({"meta-eval", "--scores", write("x.jsonl", ""), "--scores", path("x.jsonl"), "--judgments", darr(),
                 "--bootstrap", "1000"})
                .code,
            1);
  EXPECT_EQ(run({"meta-eval", "--scores", write("y.jsonl", ""), "--judgments", darr()}).code, 2);

  std::string url;
  {
    NgramBackend oracle;
    support::ProtocolServer gone(oracle, {});
    url = gone.url();
  }
  const auto r = run({"refine", "--ref", "a b", "--hyp", "a c", "--backend", "remote", "--endpoint", url});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("backend error"), std::string::npos);
  EXPECT_EQ(run({"serve-check", "--endpoint", url}).code, 3);
}

TEST_F(CliTest, HelpListsFlags) {
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"score", "refine", "meta-eval", "sweep", "serve-check"})
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  const auto score = run({"score", "--help"});
  EXPECT_EQ(score.code, 0);
  for (const char* flag : {"--backend", "--endpoint", "--variant", "--prompts", "--k", "--iterations", "--weights",
                           "--overlap-threshold", "--lowprob-threshold", "--non-translation-weighting", "--jobs"})
    EXPECT_NE(score.out.find(flag), std::string::npos) << flag;
  const auto meta = run({"meta-eval", "--help"});
  for (const char* flag : {"--judgments", "--mqm", "--topk", "--bootstrap", "--seed", "--remove-outliers", "--format"})
    EXPECT_NE(meta.out.find(flag), std::string::npos) << flag;
}

TEST_F(CliTest, ServeCheckAgainstTestServer) {
  NgramBackend oracle;
  support::ProtocolServer server(oracle, {});
  const auto r = run({"serve-check", "--endpoint", server.url()});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS\tinfo"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, RemoteBackendEndToEnd) {
  NgramBackend oracle;
  support::ProtocolServer server(oracle, {});
  const auto remote = run({"refine", "--ref", "a b c d", "--hyp", "a b X d", "--variant", "precision", "--backend",
                           "remote", "--endpoint", server.url()});
  ASSERT_EQ(remote.code, 0) << remote.err;
  EXPECT_EQ(remote.out, "a b c d\n");
}

TEST(CliParsers, WeightsAndRatios) {
  EXPECT_EQ(cli::parse_weights("1.4:1"), (std::pair{1.4, 1.0}));
  EXPECT_THROW(cli::parse_weights("1.4"), ArgumentError);
  EXPECT_THROW(cli::parse_weights("a:b"), ArgumentError);
  const auto r = cli::parse_ratios("1.0,1.1,...,1.5");
  ASSERT_EQ(r.size(), 6u);
  EXPECT_EQ(r[4], 1.4);
  EXPECT_EQ(r[5], 1.5);
  EXPECT_EQ(cli::parse_ratios("2,3"), (std::vector<double>{2.0, 3.0}));
  EXPECT_THROW(cli::parse_ratios("1,...,2"), ArgumentError);
}
