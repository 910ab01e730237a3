#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "cleardr/checkpoint.hpp"
#include "cleardr/clear.hpp"
#include "cleardr/discovery.hpp"
#include "cleardr/image.hpp"
#include "cleardr/parallel.hpp"
#include "cli.hpp"
#include "test_util.hpp"

namespace cleardr {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// One small planted-lesion fixture and a briefly trained model, shared by all tests.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    set_thread_count(1);
    dir_ = new testing::TempDir;
    const CliResult s = cli_run({"synth", "--out", data().string(), "--count", "30", "--seed", "3"});
    ASSERT_EQ(s.code, 0) << s.err;
    const CliResult t = cli_run(train_args(model()));
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    set_thread_count(0);
  }

  static std::vector<std::string> train_args(const fs::path& out) {
    return {"train", "--csv", (data() / "labels.csv").string(), "--images", data().string(), "--out", out.string(),
            "--metrics", (out.string() + ".metrics"), "--epochs", "3", "--grades", "a,b,c", "--seed", "7"};
  }
  static fs::path root() { return dir_->path(); }
  static fs::path data() { return root() / "data"; }
  static fs::path model() { return root() / "model.clrs"; }
  static fs::path image() { return data() / "img_4.png"; }

  static testing::TempDir* dir_;
};

testing::TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli_run({}).code, cli::kInputError);
  EXPECT_EQ(cli_run({"frobnicate"}).code, cli::kInputError);
  EXPECT_EQ(cli_run({"grade", "--model", model().string(), "--image", image().string(), "--bogus"}).code,
            cli::kInputError);
  EXPECT_EQ(cli_run({"train", "--help"}).code, cli::kOk);
}

TEST_F(CliTest, TrainMissingCsvNamesPath) {
  const std::string csv = (root() / "absent.csv").string();
  const CliResult r = cli_run({"train", "--csv", csv, "--images", data().string()});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find(csv), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainWritesLoadableCheckpointAndMetrics) {
  const SequencerModel m = load_model(model());
  EXPECT_EQ(m.config.grades.names, (std::vector<std::string>{"a", "b", "c"}));
  std::ifstream metrics(model().string() + ".metrics");
  std::vector<std::string> rows;
  for (std::string l; std::getline(metrics, l);) rows.push_back(l);
  ASSERT_EQ(rows.size(), 3u);
  const std::regex row(R"(\d+,[0-9.]+,[0-9.]+,[0-9.]+)");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_TRUE(std::regex_match(rows[i], row)) << rows[i];
    EXPECT_EQ(rows[i].substr(0, 2), std::to_string(i + 1) + ",");
  }
}

TEST_F(CliTest, SameSeedByteIdenticalCheckpoints) {
  const fs::path again = root() / "again.clrs";
  ASSERT_EQ(cli_run(train_args(again)).code, 0);
  EXPECT_EQ(bytes_of(again), bytes_of(model()));
  auto other = train_args(root() / "other.clrs");
  other.back() = "8";
  ASSERT_EQ(cli_run(other).code, 0);
  EXPECT_NE(bytes_of(root() / "other.clrs"), bytes_of(model()));
}

TEST_F(CliTest, ConfigFileOverridesAndRejectsUnknownKeys) {
  const fs::path cfg = root() / "train.conf";
  std::ofstream(cfg) << "# short run\nepochs=1\nlr=0.005\n";
  auto args = train_args(root() / "conf.clrs");
  args.erase(args.begin() + 9, args.begin() + 11);  // drop --epochs 3
  args.insert(args.end(), {"--config", cfg.string()});
  const CliResult r = cli_run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t epochs = 0;
  for (const auto& l : lines_of(r.out)) epochs += l.rfind("epoch ", 0) == 0 ? 1 : 0;
  EXPECT_EQ(epochs, 1u);
  std::ofstream(cfg) << "epochz=1\n";
  EXPECT_EQ(cli_run(args).code, cli::kInputError);
}

TEST_F(CliTest, DivergenceExitsThree) {
  auto args = train_args(root() / "diverge.clrs");
  args.insert(args.end(), {"--lr", "1e30", "--momentum", "0"});
  const CliResult r = cli_run(args);
  EXPECT_EQ(r.code, cli::kDiverged) << r.out << r.err;
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
}

TEST_F(CliTest, InvalidTrainingFlagsExitTwo) {
  auto args = train_args(root() / "bad.clrs");
  args.insert(args.end(), {"--split", "1.5"});
  EXPECT_EQ(cli_run(args).code, cli::kInputError);
  args = train_args(root() / "bad.clrs");
  args.insert(args.end(), {"--layers", "conv(4,3,3,1,1),gap"});
  EXPECT_EQ(cli_run(args).code, cli::kInputError);  // final conv must have 3 kernels
}

TEST_F(CliTest, GradeLineIsDeterministicAndNormalized) {
  const std::vector<std::string> args{"grade", "--model", model().string(), "--image", image().string()};
  const CliResult a = cli_run(args), b = cli_run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  std::smatch m;
  const std::regex line(R"(grade=(\d) name=([abc]) probs=([0-9.]+),([0-9.]+),([0-9.]+)\n)");
  ASSERT_TRUE(std::regex_match(a.out, m, line)) << a.out;
  EXPECT_EQ(m[2].str(), std::string(1, static_cast<char>('a' + std::stoi(m[1].str()))));
  EXPECT_NEAR(std::stod(m[3]) + std::stod(m[4]) + std::stod(m[5]), 1.0, 1e-4);
}

TEST_F(CliTest, GradeMissingInputsExitTwo) {
  EXPECT_EQ(cli_run({"grade", "--model", (root() / "none.clrs").string(), "--image", image().string()}).code,
            cli::kInputError);
  const fs::path junk = root() / "junk.png";
  std::ofstream(junk) << "not a png";
  EXPECT_EQ(cli_run({"grade", "--model", model().string(), "--image", junk.string()}).code, cli::kInputError);
  EXPECT_EQ(cli_run({"grade", "--model", junk.string(), "--image", image().string()}).code, cli::kInputError);
}

TEST_F(CliTest, ClearMapResolutionOverlayAndBox) {
  const fs::path out = root() / "c.png";
  const CliResult r = cli_run({"clear-map", "--model", model().string(), "--image", image().string(), "--out", out.string(),
                         "--alpha", "0", "--box", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  const RawImage clear = read_image(out);
  EXPECT_EQ(clear.height, 64u);
  EXPECT_EQ(clear.width, 64u);
  const RawImage over = read_image(root() / "c_overlay.png");
  const RawImage src = read_image(image());
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(box=(\d+),(\d+),16,16)")));
  const Box box{std::stoul(m[1]), std::stoul(m[2]), 16, 16};
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const bool edge = (y == box.y || y == box.y + 15) && x >= box.x && x < box.x + 16 ? true
                        : (x == box.x || x == box.x + 15) && y >= box.y && y < box.y + 16;
      const std::uint8_t* p = over.at(y, x);
      if (edge) {
        EXPECT_TRUE(p[0] == 255 && p[1] == 0 && p[2] == 0);
      } else {
        const long gray = std::lround(luminance(src.at(y, x)));  // alpha 0: grayscale source
        EXPECT_TRUE(p[0] == gray && p[1] == gray && p[2] == gray);
      }
    }
}

TEST_F(CliTest, ClearMapIsDeterministic) {
  const std::vector<std::string> base{"clear-map", "--model", model().string(), "--image", image().string(), "--out"};
  auto a = base, b = base;
  a.push_back((root() / "d1.png").string());
  b.push_back((root() / "d2.png").string());
  ASSERT_EQ(cli_run(a).code, 0);
  ASSERT_EQ(cli_run(b).code, 0);
  EXPECT_EQ(bytes_of(root() / "d1.png"), bytes_of(root() / "d2.png"));
}

TEST_F(CliTest, ClearMapBadGatingListsPolicies) {
  const CliResult r = cli_run({"clear-map", "--model", model().string(), "--image", image().string(), "--out",
                         (root() / "g.png").string(), "--gating", "occlusion"});
  EXPECT_EQ(r.code, cli::kInputError);
  EXPECT_NE(r.err.find("deconvnet, guided, none"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root() / "g.png"));
  EXPECT_EQ(cli_run({"clear-map", "--model", model().string(), "--image", image().string(), "--palette", "fancy"}).code,
            cli::kInputError);
}

TEST_F(CliTest, SidecarSuperpositionUnderLinearPolicy) {
  const fs::path per = root() / "per.clra", full = root() / "full.clra";
  const CliResult r = cli_run({"clear-map", "--model", model().string(), "--image", image().string(), "--out",
                         (root() / "s.png").string(), "--gating", "none", "--sidecar", per.string(), "--full-sidecar",
                         full.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Tensor maps = read_stack_sidecar(per), whole = read_stack_sidecar(full);
  ASSERT_EQ(maps.shape(), (Shape{1, 3, 64, 64}));
  ASSERT_EQ(whole.shape(), (Shape{1, 1, 64, 64}));
  double diff = 0.0;
  for (std::size_t i = 0; i < whole.size(); ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < 3; ++d) s += maps.plane(0, d)[i];
    diff += (s - whole[i]) * (s - whole[i]);
  }
  EXPECT_LE(std::sqrt(diff) / norm2(whole.data()), 1e-4);
}

TEST_F(CliTest, EvalMatchesLibraryEvaluation) {
  const CliResult r = cli_run({"eval", "--model", model().string(), "--csv", (data() / "labels.csv").string(), "--images",
                         data().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = lines_of(r.out);
  ASSERT_EQ(lines.size(), 4u);
  std::smatch m;
  ASSERT_TRUE(std::regex_match(lines[0], m, std::regex(R"(accuracy=([0-9.]+))")));

  const SequencerModel model_loaded = load_model(model());
  LabeledDataset d{{}, 3};
  for (const auto& row : load_manifest(data() / "labels.csv", data(), Laterality::kAll, 3).rows)
    d.samples.push_back({load_preprocessed(row.file, 64, 64, 10.0), row.grade, row.image});
  const Evaluation ev = evaluate(model_loaded, TestSet{d});
  EXPECT_NEAR(std::stod(m[1]), ev.accuracy, 1e-6);
  std::size_t total = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    std::istringstream row(lines[t + 1]);
    for (std::size_t p = 0; p < 3; ++p) {
      std::size_t v = 0;
      row >> v;
      EXPECT_EQ(v, ev.confusion[t][p]);
      total += v;
    }
  }
  EXPECT_EQ(total, 30u);
}

TEST_F(CliTest, EvalEmptySetExitsTwo) {
  const fs::path csv = root() / "empty.csv";
  std::ofstream(csv) << "image,level\n";
  EXPECT_EQ(cli_run({"eval", "--model", model().string(), "--csv", csv.string(), "--images", data().string()}).code,
            cli::kInputError);
}

TEST_F(CliTest, SelftestReportsEachCheck) {
  const CliResult ok = cli_run({"selftest"});
  EXPECT_EQ(ok.code, cli::kOk) << ok.out;
  const auto lines = lines_of(ok.out);
  EXPECT_GE(lines.size(), 5u);
  for (const auto& l : lines) EXPECT_TRUE(std::regex_match(l, std::regex(R"([a-z_]+: ok.*)"))) << l;
  const CliResult bad = cli_run({"selftest", "--inject-fault", "adjoint"});
  EXPECT_EQ(bad.code, cli::kCheckFailed);
  EXPECT_NE(bad.out.find("adjoint_identity: FAIL"), std::string::npos) << bad.out;
}

}  // namespace
}  // namespace cleardr
