#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "cyclegen/cli.hpp"
#include "cyclegen/corpus.hpp"
#include "cyclegen/toy_grammar.hpp"

namespace fs = std::filesystem;
namespace cli = cyclegen::cli;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "cyclegen");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

// Small model flags so a run takes seconds.
std::vector<std::string> tiny(std::vector<std::string> a) {
  for (const char* f : {"--d-model", "16", "--heads", "2", "--d-ff", "32", "--layers", "1"}) a.emplace_back(f);
  return a;
}

json without_seconds(json rec) {
  for (auto& e : rec["epochs"]) e.erase("seconds");
  return rec;
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& out_file) {
  const pid_t pid = fork();
  if (pid == 0) {
    const int fd = ::open(out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(fd, 1);
    const int null = ::open("/dev/null", O_WRONLY);
    dup2(null, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(CYCLEGEN_CLI, argv.data());
    _exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    cyclegen::toy::GrammarConfig g;
    g.samples = 80;
    cyclegen::corpus::save_dataset(cyclegen::toy::generate(g, 5), data());
  }
  fs::path data() const { return dir_ / "toy.jsonl"; }
  fs::path dir_;
};

TEST_F(Cli, HelpListsEveryStrategy) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"fully-supervised", "low-resource-ft", "low-resource-ft-pretrain", "unsupervised-cycle",
                        "low-resource-cycle"}) {
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  }
  const auto sub = run({"cycle-train", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("low-resource-cycle"), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"nonsense"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"prepare", "--input", data().string()}).code, cli::kExitUsage);  // --out missing
  EXPECT_EQ(run({"prepare", "--input", (dir_ / "missing.jsonl").string(), "--out", (dir_ / "p").string()}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"train-baseline", "--data", data().string(), "--strategy", "nope"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train-baseline", "--data", data().string(), "--strategy", "low-resource-cycle"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"cycle-train", "--data", data().string(), "--strategy", "fully-supervised"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train-baseline", "--data", data().string(), "--strategy", "fully-supervised", "--lr", "-1"}).code,
            cli::kExitUsage);
  EXPECT_EQ(run({"overlap-exp", "--data", data().string(), "--levels", "0,30"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train-baseline", "--config", (dir_ / "none.json").string()}).code, cli::kExitUsage);

  // runtime: output path under a regular file
  std::ofstream(dir_ / "blocker") << "x";
  const auto gen = dir_ / "g.jsonl";
  std::ofstream(gen) << json{{"id", "x"}, {"generation", "y"}}.dump() << "\n";
  const auto r = run({"evaluate", "--data", data().string(), "--generations", gen.string(), "--split", "train", "--out",
                      (dir_ / "blocker" / "r.csv").string()});
  EXPECT_EQ(r.code, cli::kExitUsage) << "ids do not match the split";
  auto ds = cyclegen::corpus::load_dataset(data(), cyclegen::corpus::Format::kWebNlgJsonl);
  std::ofstream all(gen);
  for (const auto& s : ds.split(cyclegen::corpus::Split::kTest)) {
    all << json{{"id", s.id}, {"generation", s.references[0]}}.dump() << "\n";
  }
  all.close();
  EXPECT_EQ(run({"evaluate", "--data", data().string(), "--generations", gen.string(), "--out",
                 (dir_ / "blocker" / "r.csv").string()})
                .code,
            cli::kExitRuntime);
}

TEST_F(Cli, PrepareIsDeterministic) {
  auto prep = [&](const std::string& out, const std::string& seed) {
    return run({"prepare", "--input", data().string(), "--out", (dir_ / out).string(), "--overlap", "50", "--seed",
                seed, "--low-resource", "10", "--unpaired"});
  };
  ASSERT_EQ(prep("a", "4").code, 0);
  ASSERT_EQ(prep("b", "4").code, 0);
  ASSERT_EQ(prep("c", "5").code, 0);
  for (const char* f : {"overlap50.data.jsonl", "overlap50.text.jsonl", "overlap50.provenance.json",
                        "low_resource.jsonl", "unpaired.text.jsonl", "dataset.jsonl", "prepare.json"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  }
  EXPECT_NE(slurp(dir_ / "a" / "overlap50.text.jsonl"), slurp(dir_ / "c" / "overlap50.text.jsonl"));
  const auto summary = json::parse(slurp(dir_ / "a" / "prepare.json"));
  EXPECT_EQ(summary["low_resource"], 10);
  EXPECT_EQ(count_lines(dir_ / "a" / "low_resource.jsonl"), 10u);
}

TEST_F(Cli, PrepareCleansDart) {
  const auto p = dir_ / "dart.jsonl";
  std::ofstream(p) << R"({"id":"1","split":"train","triples":[["A","b","C"]],"references":["A b C."]})"
                   << "\n"
                   << R"({"id":"2","split":"train","triples":[["[TABLECONTEXT]","[TITLE]","X"]],"references":["X."]})"
                   << "\n";
  const auto r = run({"prepare", "--input", p.string(), "--format", "dart", "--clean", "--out", (dir_ / "d").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(slurp(dir_ / "d" / "prepare.json"))["dropped"], 1);
  EXPECT_EQ(count_lines(dir_ / "d" / "dataset.jsonl"), 1u);
}

TEST_F(Cli, SeedsConfigLayeringAndRunRoot) {
  std::ofstream(dir_ / "cfg.json") << json{{"name", "layered"},
                                           {"cycle", {{"max_epochs", 9}, {"patience", 7}, {"seeds", {1}}}}}
                                          .dump();
  const auto root = dir_ / "env_root";
  ::setenv(cli::kRunRootEnv, root.c_str(), 1);
  const auto r = run(tiny({"train-baseline", "--config", (dir_ / "cfg.json").string(), "--data", data().string(),
                           "--strategy", "fully-supervised", "--epochs", "2", "--seeds", "3"}));
  ::unsetenv(cli::kRunRootEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto exp = root / "layered";
  for (int s = 1; s <= 3; ++s) EXPECT_TRUE(fs::exists(exp / ("seed" + std::to_string(s)) / "record.json")) << s;
  EXPECT_FALSE(fs::exists(exp / "seed4"));
  const auto cfg = json::parse(slurp(exp / "experiment.json"));
  EXPECT_EQ(cfg["cycle"]["max_epochs"], 2);  // flag beats file
  EXPECT_EQ(cfg["cycle"]["patience"], 7);    // file beats default
  EXPECT_EQ(cfg["cycle"]["seeds"], json({1, 2, 3}));
  EXPECT_EQ(cfg["model"]["d_model"], 16);
  EXPECT_EQ(cfg["strategy"], "fully-supervised");
  EXPECT_NE(slurp(exp / "summary.csv").find("\nlayered,3,"), std::string::npos);
}

TEST_F(Cli, CycleTrainWithUnpairedCorpora) {
  ASSERT_EQ(run({"prepare", "--input", data().string(), "--out", (dir_ / "p").string(), "--unpaired"}).code, 0);
  const auto r = run(tiny({"cycle-train", "--data", data().string(), "--unpaired", (dir_ / "p" / "unpaired").string(),
                           "--strategy", "unsupervised-cycle", "--seeds", "1", "--epochs", "1", "--pre-cycle-epochs",
                           "1", "--out", (dir_ / "runs").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rec = json::parse(slurp(dir_ / "runs" / "unsupervised-cycle" / "seed1" / "record.json"));
  EXPECT_TRUE(rec["completed"].get<bool>());
  EXPECT_EQ(rec["strategy"], "unsupervised-cycle");
}

TEST_F(Cli, KilledRunResumes) {
  cyclegen::toy::GrammarConfig g;
  g.samples = 300;
  const auto big = dir_ / "big.jsonl";
  cyclegen::corpus::save_dataset(cyclegen::toy::generate(g, 5), big);
  auto args = [&](const fs::path& out) {
    std::vector<std::string> a = {CYCLEGEN_CLI, "train-baseline", "--data", big.string(), "--strategy",
                                  "fully-supervised", "--seeds", "1", "--epochs", "8", "--patience", "20",
                                  "--d-model", "32", "--heads", "2", "--d-ff", "64", "--layers", "1",
                                  "--out", out.string()};
    return a;
  };
  ASSERT_EQ(wait_exit(spawn(args(dir_ / "straight"), dir_ / "o1")), 0);

  const auto seed_dir = dir_ / "killed" / "fully-supervised" / "seed1";
  const pid_t pid = spawn(args(dir_ / "killed"), dir_ / "o2");
  bool killed = false;
  for (int i = 0; i < 60000; ++i) {
    if (count_lines(seed_dir / "epochs.jsonl") >= 3) {
      kill(pid, SIGKILL);
      killed = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  EXPECT_EQ(wait_exit(pid), -SIGKILL);
  ASSERT_TRUE(killed);
  ASSERT_FALSE(fs::exists(seed_dir / "record.json")) << "run finished before the kill";

  ASSERT_EQ(wait_exit(spawn(args(dir_ / "killed"), dir_ / "o3")), 0);
  const auto a = json::parse(slurp(dir_ / "straight" / "fully-supervised" / "seed1" / "record.json"));
  const auto b = json::parse(slurp(seed_dir / "record.json"));
  EXPECT_EQ(without_seconds(a), without_seconds(b));
  EXPECT_EQ(slurp(dir_ / "straight" / "fully-supervised" / "seed1" / "test_generations.jsonl"),
            slurp(seed_dir / "test_generations.jsonl"));
}

TEST_F(Cli, EvaluateWritesCsvInTableOrder) {
  auto ds = cyclegen::corpus::load_dataset(data(), cyclegen::corpus::Format::kWebNlgJsonl);
  const auto gen = dir_ / "seed1.jsonl";
  std::ofstream out(gen);
  for (const auto& s : ds.split(cyclegen::corpus::Split::kTest)) {
    out << json{{"id", s.id}, {"generation", s.references[0]}}.dump() << "\n";
  }
  out.close();
  const auto r = run({"evaluate", "--data", data().string(), "--generations", gen.string(), "--system", "oracle",
                      "--out", (dir_ / "r.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir_ / "r.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "system,runs,ROUGE-1,ROUGE-1_var,ROUGE-2,ROUGE-2_var,ROUGE-L,ROUGE-L_var,METEOR,METEOR_var,BLEU,BLEU_var,"
            "PARENT,PARENT_var");
  EXPECT_NE(csv.find("oracle,1,100.0000"), std::string::npos) << csv;

  std::ofstream(dir_ / "empty.jsonl").close();
  const auto e = run({"evaluate", "--data", data().string(), "--generations", (dir_ / "empty.jsonl").string()});
  EXPECT_EQ(e.code, cli::kExitUsage);
  EXPECT_NE(e.err.find("no generations"), std::string::npos);
}

TEST_F(Cli, ReportIsReproducibleAcrossCopies) {
  const auto runs = dir_ / "runs";
  ASSERT_EQ(run(tiny({"train-baseline", "--data", data().string(), "--strategy", "fully-supervised", "--seeds", "2",
                      "--epochs", "1", "--out", runs.string()}))
                .code,
            0);
  ASSERT_EQ(run(tiny({"train-baseline", "--data", data().string(), "--strategy", "low-resource-ft", "--seeds", "2",
                      "--epochs", "1", "--low-resource-size", "20", "--out", runs.string()}))
                .code,
            0);
  ASSERT_EQ(run({"report", "--runs", runs.string(), "--out", (dir_ / "r1.csv").string()}).code, 0);
  fs::copy(runs, dir_ / "copy", fs::copy_options::recursive);
  ASSERT_EQ(run({"report", "--runs", (dir_ / "copy").string(), "--out", (dir_ / "r2.csv").string()}).code, 0);
  ASSERT_EQ(run({"report", "--runs", runs.string(), "--out", (dir_ / "r3.csv").string()}).code, 0);
  const std::string r1 = slurp(dir_ / "r1.csv");
  EXPECT_EQ(r1, slurp(dir_ / "r2.csv"));
  EXPECT_EQ(r1, slurp(dir_ / "r3.csv"));
  EXPECT_LT(r1.find("fully-supervised,2,"), r1.find("low-resource-ft,2,"));
  EXPECT_EQ(run({"report", "--runs", (dir_ / "nothing").string()}).code, cli::kExitUsage);
}

#ifndef CYCLEGEN_NO_ANNOTATION_SERVICE
TEST_F(Cli, ServeAnnotationShutsDownCleanly) {
  const auto runs = dir_ / "runs";
  for (const char* st : {"fully-supervised", "low-resource-ft"}) {
    ASSERT_EQ(run(tiny({"train-baseline", "--data", data().string(), "--strategy", st, "--seeds", "1", "--epochs", "1",
                        "--low-resource-size", "20", "--out", runs.string()}))
                  .code,
              0);
  }
  const auto store = dir_ / "store";
  const pid_t pid = spawn({CYCLEGEN_CLI, "serve-annotation", "--data", data().string(), "--system",
                           "a=" + (runs / "fully-supervised").string(), "--system",
                           "b=" + (runs / "low-resource-ft").string(), "--store", store.string(), "--port", "0"},
                          dir_ / "serve.out");
  int port = 0;
  for (int i = 0; i < 5000 && port == 0; ++i) {
    const std::string s = slurp(dir_ / "serve.out");
    const auto at = s.find("listening on ");
    if (at != std::string::npos && s.find('\n', at) != std::string::npos) {
      port = std::stoi(s.substr(s.rfind(':', s.find('\n', at)) + 1));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  ASSERT_GT(port, 0);

  httplib::Client c("127.0.0.1", port);
  auto next = c.Get("/batches/next?annotator=ann1&task=fluency");
  ASSERT_TRUE(next);
  ASSERT_EQ(next->status, 200);
  const auto batch = json::parse(next->body);
  json ranks = json::object();
  for (const auto& g : batch["generations"]) ranks[g["id"].get<std::string>()] = 1;
  auto post = c.Post("/batches/" + batch["batch_id"].get<std::string>() + "/fluency",
                     json{{"annotator", "ann1"}, {"ranks", ranks}}.dump(), "application/json");
  ASSERT_TRUE(post);
  EXPECT_EQ(post->status, 200) << post->body;

  kill(pid, SIGTERM);
  EXPECT_EQ(wait_exit(pid), 0);
  EXPECT_NE(slurp(dir_ / "serve.out").find("stopped; 1 annotations"), std::string::npos);
  ASSERT_TRUE(fs::exists(store / "snapshot.json"));
  cyclegen::humaneval::AnnotationStore reopened(store);
  EXPECT_EQ(reopened.fluency_rankings().size(), 1u);
}
#endif

}  // namespace
