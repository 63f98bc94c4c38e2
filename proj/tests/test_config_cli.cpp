#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fedcoal_cli.hpp"

using namespace fedcoal;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = FEDCOAL_SOURCE_DIR;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("fedcoal-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "fedcoal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

constexpr const char* kSmallConfig = R"(name = small
seed = 3
clients = 4
rounds = 12
strategy = coalition, fedavg
wall_time = false

[coalition]
k = 2

[data]
source = synth
classes = 3
per_class = 20
test_per_class = 20
input_dim = 5

[train]
epochs = 1
)";

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

// ---------------------------------------------------------------------------
// config

TEST(Config, SectionsPrefixKeysAndCommentsAreIgnored) {
  const auto doc = ConfigDocument::parse("seed = 4  # trailing\n\n[train]\nlr=0.5\n");
  ASSERT_NE(doc.find("seed"), nullptr);
  EXPECT_EQ(doc.find("seed")->value, "4");
  ASSERT_NE(doc.find("train.lr"), nullptr);
  EXPECT_EQ(doc.find("train.lr")->value, "0.5");
  EXPECT_EQ(doc.find("train.lr")->line, 4u);
}

TEST(Config, MalformedLineReportsLine) {
  try {
    ConfigDocument::parse("seed = 1\nnot a pair\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Config, BadValueNamesFieldAndLine) {
  try {
    resolve_config(ConfigDocument::parse("seed = 1\n[train]\nlr = fast\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.lr");
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find("train.lr"), std::string::npos);
  }
}

TEST(Config, UnknownKeyRejected) {
  try {
    resolve_config(ConfigDocument::parse("rounds = 3\nround = 4\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "round");
  }
}

TEST(Config, OverrideWins) {
  auto doc = ConfigDocument::parse(kSmallConfig);
  doc.set(std::string_view("rounds=5"));
  doc.set(std::string_view("train.lr = 0.2"));
  const auto spec = resolve_config(doc);
  EXPECT_EQ(spec.experiment.rounds, 5u);
  EXPECT_EQ(spec.experiment.train.learning_rate, 0.2);
  ASSERT_EQ(spec.strategies.size(), 2u);
  EXPECT_EQ(spec.strategies[0].kind, StrategyKind::Coalition);
  EXPECT_EQ(spec.strategies[0].coalitions, 2u);
  EXPECT_EQ(spec.strategies[1].kind, StrategyKind::FedAvg);
}

TEST(Config, DefaultsFollowTheReferenceSetup) {
  const auto spec = resolve_config(ConfigDocument::parse("model.kind = mlp\n"));
  EXPECT_EQ(spec.experiment.client_count, 10u);
  EXPECT_EQ(spec.experiment.strategy.coalitions, 3u);
  EXPECT_EQ(spec.experiment.train.local_epochs, 5u);
  EXPECT_EQ(spec.experiment.train.batch_size, 10u);
  EXPECT_EQ(spec.experiment.train.learning_rate, 0.01);
  EXPECT_EQ(spec.experiment.model.hidden_dims, std::vector<std::size_t>{64});
}

TEST(Config, CnnReferenceRejected) {
  EXPECT_THROW(resolve_config(ConfigDocument::parse("model.kind = cnn-reference\n")), ConfigError);
}

TEST(Config, InvalidCombinationNamesField) {
  try {
    resolve_config(ConfigDocument::parse("clients = 2\ncoalition.k = 3\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "strategy");
  }
}

TEST(Config, ShippedConfigsResolve) {
  for (const char* name : {"iid_blobs.cfg", "dirichlet_blobs.cfg"}) {
    EXPECT_NO_THROW(resolve_config(ConfigDocument::load(kSource / "configs" / name))) << name;
  }
  const auto doc = ConfigDocument::load(kSource / "configs" / "mnist_mlp.cfg");
  EXPECT_EQ(cli::fetch_entries(doc).size(), 4u);
}

// ---------------------------------------------------------------------------
// run

TEST(CliRun, OverrideRoundsWritesThatManyRows) {
  TempDir dir;
  cli::write_text(dir.path() / "exp.cfg", kSmallConfig);
  const auto r = invoke({"run", "--config", (dir.path() / "exp.cfg").string(), "--set", "rounds=5", "--set",
                         "strategy=coalition", "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = cli::read_text(dir.path() / "small.csv");
  EXPECT_EQ(count_lines(csv), 6u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  EXPECT_TRUE(fs::exists(dir.path() / "small.json"));
}

TEST(CliRun, MissingDatasetPathExitsTwoAndNamesField) {
  TempDir dir;
  cli::write_text(dir.path() / "exp.cfg", "data.source = idx\ndata.train_images = " +
                                               (dir.path() / "nope").string() + "\n");
  const auto r = invoke({"run", "--config", (dir.path() / "exp.cfg").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.train_images"), std::string::npos) << r.err;
}

TEST(CliRun, UnreadableConfigExitsTwo) {
  TempDir dir;
  EXPECT_EQ(invoke({"run", "--config", (dir.path() / "absent.cfg").string()}).code, 2);
  EXPECT_EQ(invoke({"run"}).code, 2);
}

TEST(CliRun, DivergenceExitsThreeWithPartialRecords) {
  TempDir dir;
  cli::write_text(dir.path() / "exp.cfg", kSmallConfig);
  const auto r = invoke({"run", "--config", (dir.path() / "exp.cfg").string(), "--set", "data.separation=1e300",
                         "--set", "train.lr=1", "--set", "data.input_dim=10", "--out", dir.path().string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("diverged"), std::string::npos) << r.err;
  const auto csv = cli::read_text(dir.path() / "small.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
}

TEST(CliRun, JsonMirrorsCsvRows) {
  TempDir dir;
  cli::write_text(dir.path() / "exp.cfg", kSmallConfig);
  ASSERT_EQ(invoke({"run", "--config", (dir.path() / "exp.cfg").string(), "--out", dir.path().string()}).code, 0);
  const auto series = read_metrics_csv(cli::read_text(dir.path() / "small.csv"), "small");
  const auto json = nlohmann::json::parse(cli::read_text(dir.path() / "small.json"));
  EXPECT_EQ(json["config"]["seed"], "3");
  const auto& recs = json["records"];
  ASSERT_EQ(series.size(), 2u);
  ASSERT_EQ(recs.size(), series[0].rounds.size() + series[1].rounds.size());
  std::size_t i = 0;
  for (const auto& s : series) {
    for (std::size_t j = 0; j < s.rounds.size(); ++j, ++i) {
      EXPECT_EQ(recs[i]["round"].get<std::uint64_t>(), s.rounds[j]);
      EXPECT_EQ(recs[i]["test_accuracy"].get<double>(), s.accuracy[j]);
    }
  }
  EXPECT_EQ(recs[0]["strategy"], "coalition");
  EXPECT_EQ(recs[0]["coalition_sizes"].size(), 2u);
  EXPECT_TRUE(recs[0]["wall_ms"].is_null());
}

TEST(CliRun, SeedFlagChangesResultsAndIsDeterministic) {
  TempDir dir;
  cli::write_text(dir.path() / "exp.cfg", kSmallConfig);
  const auto cfg = (dir.path() / "exp.cfg").string();
  const auto run_with = [&](const std::string& seed, const std::string& sub) {
    const auto out = dir.path() / sub;
    EXPECT_EQ(invoke({"run", "--config", cfg, "--seed", seed, "--out", out.string()}).code, 0);
    return cli::read_text(out / "small.csv");
  };
  const auto a = run_with("9", "a");
  EXPECT_EQ(a, run_with("9", "b"));
  EXPECT_NE(a, run_with("10", "c"));
}

TEST(CliRun, GoldenCsvMatchesByteForByte) {
  TempDir dir;
  const auto r = invoke({"run", "--config", (kSource / "configs" / "iid_blobs.cfg").string(), "--out",
                         dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(cli::read_text(dir.path() / "iid_blobs.csv"),
            cli::read_text(kSource / "tests" / "golden" / "iid_blobs.csv"));
}

// ---------------------------------------------------------------------------
// fetch

namespace {

class LocalServer {
 public:
  explicit LocalServer(std::string payload) : payload_(std::move(payload)) {
    server_.Get("/payload.bin", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_;
      res.set_content(payload_, "application/octet-stream");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/payload.bin"; }
  int hits() const { return hits_; }

 private:
  std::string payload_;
  httplib::Server server_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::thread thread_;
};

std::string fetch_config(const std::string& url, const std::string& sha, std::size_t bytes) {
  return "[fetch]\npayload.url = " + url + "\npayload.sha256 = " + sha + "\npayload.bytes = " +
         std::to_string(bytes) + "\n";
}

}  // namespace

TEST(CliFetch, Sha256KnownVector) {
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CliFetch, DownloadsThenSkipsWithoutNetwork) {
  const std::string payload = "federated bytes\n";
  LocalServer server(payload);
  TempDir dir;
  cli::write_text(dir.path() / "f.cfg", fetch_config(server.url(), cli::sha256_hex(payload), payload.size()));
  const auto args = std::vector<std::string>{"fetch", "--config", (dir.path() / "f.cfg").string(), "--out",
                                             (dir.path() / "data").string()};
  auto r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(server.hits(), 1);
  EXPECT_EQ(cli::read_text(dir.path() / "data" / "payload.bin"), payload);

  r = invoke(args);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(server.hits(), 1);
}

TEST(CliFetch, ExistingValidFileNeedsNoServer) {
  TempDir dir;
  const std::string payload = "already here";
  cli::write_text(dir.path() / "payload.bin", payload);
  cli::write_text(dir.path() / "f.cfg",
                  fetch_config("http://127.0.0.1:9/payload.bin", cli::sha256_hex(payload), payload.size()));
  const auto r = invoke({"fetch", "--config", (dir.path() / "f.cfg").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(CliFetch, WrongChecksumExitsFourAndRemovesFile) {
  const std::string payload = "tampered";
  LocalServer server(payload);
  TempDir dir;
  cli::write_text(dir.path() / "payload.bin", "stale");
  cli::write_text(dir.path() / "f.cfg", fetch_config(server.url(), std::string(64, '0'), payload.size()));
  const auto r = invoke({"fetch", "--config", (dir.path() / "f.cfg").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_FALSE(fs::exists(dir.path() / "payload.bin"));
}

TEST(CliFetch, EmptyListIsNoOp) {
  TempDir dir;
  cli::write_text(dir.path() / "f.cfg", "seed = 1\n");
  const auto r = invoke({"fetch", "--config", (dir.path() / "f.cfg").string(), "--out", dir.path().string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator{}), 1);
}

TEST(CliFetch, GunzipRoundTrip) {
  // gzip -9 of "hello\n"
  const unsigned char gz[] = {0x1f, 0x8b, 0x08, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, 0x03, 0xcb, 0x48, 0xcd,
                              0xc9, 0xc9, 0xe7, 0x02, 0x00, 0x20, 0x30, 0x3a, 0x36, 0x06, 0x00, 0x00, 0x00};
  EXPECT_EQ(cli::gunzip(std::string(reinterpret_cast<const char*>(gz), sizeof gz)), "hello\n");
  EXPECT_THROW(cli::gunzip("not gzip"), Error);
}

// ---------------------------------------------------------------------------
// plot

namespace {

std::string metrics(const std::vector<std::pair<int, double>>& rows, const std::string& strategy) {
  std::string s(kCsvHeader);
  s += '\n';
  for (const auto& [r, a] : rows) s += std::to_string(r) + "," + format_double(a) + ",0.5," + strategy + ",,,\n";
  return s;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(CliPlot, OneCsvOneSeries) {
  TempDir dir;
  cli::write_text(dir.path() / "a.csv", metrics({{1, 0.5}, {2, 0.75}}, "fedavg"));
  const auto r = invoke({"plot", (dir.path() / "a.csv").string(), "--out", (dir.path() / "p.svg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto svg = cli::read_text(dir.path() / "p.svg");
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_EQ(cli::read_text(dir.path() / "p.csv"), "round,a\n1,0.5\n2,0.75\n");
}

TEST(CliPlot, TwoCsvsTwoSeries) {
  TempDir dir;
  cli::write_text(dir.path() / "a.csv", metrics({{1, 0.5}, {2, 0.75}}, "fedavg"));
  cli::write_text(dir.path() / "b.csv", metrics({{1, 0.25}, {2, 1.0}}, "coalition"));
  const auto r = invoke({"plot", (dir.path() / "a.csv").string(), (dir.path() / "b.csv").string(), "--out",
                         dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count(cli::read_text(dir.path() / "accuracy.svg"), "<polyline"), 2u);
  EXPECT_EQ(cli::read_text(dir.path() / "accuracy.csv"), "round,a,b\n1,0.5,0.25\n2,0.75,1\n");
}

TEST(CliPlot, EmptyCsvExitsTwo) {
  TempDir dir;
  cli::write_text(dir.path() / "e.csv", "");
  EXPECT_EQ(invoke({"plot", (dir.path() / "e.csv").string(), "--out", dir.path().string()}).code, 2);
}

TEST(CliPlot, ColumnMismatchExitsTwo) {
  TempDir dir;
  cli::write_text(dir.path() / "a.csv", metrics({{1, 0.5}, {2, 0.75}}, "fedavg"));
  cli::write_text(dir.path() / "b.csv", metrics({{1, 0.5}, {3, 0.75}}, "fedavg"));
  cli::write_text(dir.path() / "c.csv", "round,acc\n1,0.5\n");
  EXPECT_EQ(invoke({"plot", (dir.path() / "a.csv").string(), (dir.path() / "b.csv").string(), "--out",
                    dir.path().string()})
                .code,
            2);
  EXPECT_EQ(invoke({"plot", (dir.path() / "c.csv").string(), "--out", dir.path().string()}).code, 2);
}
