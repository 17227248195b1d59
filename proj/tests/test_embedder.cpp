#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "oracles.hpp"
#include "tsembed/embedder.hpp"
#include "tsembed/losses.hpp"
#include "tsembed/rng.hpp"

using namespace tsembed;
namespace fs = std::filesystem;

namespace {

Trial random_trial(RngStream& rng, int t, int c) {
  Trial trial;
  trial.samples.resize(t, c);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < c; ++j) trial.samples(i, j) = rng.normal();
  return trial;
}

ArchitectureSpec linear_arch(int t, int c, int d) {
  ArchitectureSpec a;
  a.kind = ArchKind::kLinear;
  a.time_steps = t;
  a.channels = c;
  a.embed_dim = d;
  return a;
}

// Reduced miniconv that still exercises every stage.
ArchitectureSpec small_miniconv(int t, int c, int d) {
  ArchitectureSpec a;
  a.kind = ArchKind::kMiniConv;
  a.time_steps = t;
  a.channels = c;
  a.embed_dim = d;
  a.f1 = 4;
  a.depth_mult = 2;
  a.f2 = 8;
  a.temporal_kernel = 8;
  a.sep_kernel = 4;
  a.pool1 = 2;
  a.pool2 = 2;
  return a;
}

// Central finite differences of the value path (forward_batch -> product
// ladder loss) with respect to every parameter entry.
std::vector<Eigen::MatrixXd> finite_difference_grads(
    const EmbedderParams& params, const std::vector<Trial>& batch,
    const std::vector<LabelVector>& labels, const LossConfig& config,
    double h = 1e-4) {
  EmbedderParams work = params;
  std::vector<Eigen::MatrixXd> grads = zero_like(params);
  for (std::size_t ti = 0; ti < work.tensors.size(); ++ti) {
    Eigen::MatrixXd& tensor = work.tensors[ti].value;
    for (Eigen::Index r = 0; r < tensor.rows(); ++r)
      for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
        const double saved = tensor(r, c);
        tensor(r, c) = saved + h;
        const double up =
            product_ladder_loss(forward_batch(work, batch), labels, config);
        tensor(r, c) = saved - h;
        const double down =
            product_ladder_loss(forward_batch(work, batch), labels, config);
        tensor(r, c) = saved;
        grads[ti](r, c) = (up - down) / (2.0 * h);
      }
  }
  return grads;
}

void require_grads_close(const std::vector<Eigen::MatrixXd>& analytic,
                         const std::vector<Eigen::MatrixXd>& numeric) {
  for (std::size_t ti = 0; ti < analytic.size(); ++ti)
    for (Eigen::Index r = 0; r < analytic[ti].rows(); ++r)
      for (Eigen::Index c = 0; c < analytic[ti].cols(); ++c) {
        const double a = analytic[ti](r, c);
        const double f = numeric[ti](r, c);
        const double tol =
            std::max(1e-4 * std::max(std::fabs(a), std::fabs(f)), 1e-6);
        if (std::fabs(a - f) > tol) {
          CAPTURE(ti, r, c, a, f);
          REQUIRE(std::fabs(a - f) <= tol);
        }
      }
  SUCCEED();
}

}  // namespace

TEST_CASE("linear parameters have the forced shapes") {
  const auto params = init_params(linear_arch(4, 2, 8), 0);
  REQUIRE(params.tensors.size() == 2);
  REQUIRE(params.tensors[0].value.rows() == 8);
  REQUIRE(params.tensors[0].value.cols() == 8);
  REQUIRE(params.tensors[1].value.rows() == 8);
  REQUIRE(params.tensors[1].value.cols() == 1);
  REQUIRE(params.tensors[1].value.isZero(0.0));
  REQUIRE(params.parameter_count() == 72);
}

TEST_CASE("init is deterministic in the seed") {
  const auto a = init_params(small_miniconv(16, 3, 4), 42);
  const auto b = init_params(small_miniconv(16, 3, 4), 42);
  const auto c = init_params(small_miniconv(16, 3, 4), 43);
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    REQUIRE(a.tensors[i].value == b.tensors[i].value);
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].value != c.tensors[i].value) differs = true;
  REQUIRE(differs);
}

TEST_CASE("miniconv parameter count matches the closed form") {
  ArchitectureSpec a;
  a.kind = ArchKind::kMiniConv;
  a.time_steps = 128;
  a.channels = 8;
  // Defaults: f1=8, depth_mult=2, f2=16, kernels 32/16, pools 4/8, d=8.
  // Counts: temporal 8*32+8=264, spatial 16*8+16=144, sep 16*16+16*16+16=528,
  // dense 8*(16*4)+8=520; total 1456.
  REQUIRE(parameter_count(a) == 1456);
  REQUIRE(init_params(a, 1).parameter_count() == 1456);
}

TEST_CASE("architecture validation rejects impossible shapes") {
  ArchitectureSpec a = small_miniconv(8, 2, 4);
  a.temporal_kernel = 16;  // > time_steps
  REQUIRE_THROWS_AS(validate_arch(a), UsageError);
  a = small_miniconv(8, 2, 4);
  a.pool1 = 16;  // pooled length 0
  REQUIRE_THROWS_AS(validate_arch(a), UsageError);
  a = small_miniconv(8, 2, 4);
  a.sep_kernel = 8;  // > pooled length 4
  REQUIRE_THROWS_AS(validate_arch(a), UsageError);
}

TEST_CASE("linear forward with identity rows selects the flattened prefix") {
  const ArchitectureSpec arch = linear_arch(3, 2, 4);
  EmbedderParams params = init_params(arch, 0);
  params.tensors[0].value = Eigen::MatrixXd::Identity(4, 6);
  params.tensors[1].value.setZero();
  RngStream rng(1);
  const Trial trial = random_trial(rng, 3, 2);
  const Eigen::VectorXd emb = forward(params, trial);
  // Time-major flattening: index t*channels + c.
  REQUIRE(emb[0] == trial.samples(0, 0));
  REQUIRE(emb[1] == trial.samples(0, 1));
  REQUIRE(emb[2] == trial.samples(1, 0));
  REQUIRE(emb[3] == trial.samples(1, 1));
}

TEST_CASE("zero parameters embed everything to zero") {
  for (const ArchitectureSpec& arch :
       {linear_arch(6, 2, 3), small_miniconv(12, 3, 3)}) {
    EmbedderParams params = init_params(arch, 5);
    for (Tensor& t : params.tensors) t.value.setZero();
    RngStream rng(2);
    const Trial trial = random_trial(rng, arch.time_steps, arch.channels);
    REQUIRE(forward(params, trial).isZero(0.0));
  }
}

TEST_CASE("forward is pure and rejects bad shapes") {
  const ArchitectureSpec arch = small_miniconv(12, 3, 4);
  const EmbedderParams params = init_params(arch, 9);
  RngStream rng(3);
  const Trial trial = random_trial(rng, 12, 3);
  const Eigen::VectorXd a = forward(params, trial);
  const Eigen::VectorXd b = forward(params, trial);
  REQUIRE(a == b);
  REQUIRE(a.allFinite());
  const Trial bad = random_trial(rng, 12, 4);
  REQUIRE_THROWS_AS(forward(params, bad), ShapeMismatch);
}

TEST_CASE("forward_batch equals per-trial forward and permutes with rows") {
  const ArchitectureSpec arch = small_miniconv(12, 3, 4);
  const EmbedderParams params = init_params(arch, 11);
  RngStream rng(4);
  std::vector<Trial> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_trial(rng, 12, 3));
  const Eigen::MatrixXd V = forward_batch(params, batch);
  for (int i = 0; i < 16; ++i)
    REQUIRE(V.row(i) == forward(params, batch[i]).transpose());

  std::vector<Trial> reversed(batch.rbegin(), batch.rend());
  const Eigen::MatrixXd Vr = forward_batch(params, reversed);
  for (int i = 0; i < 16; ++i) REQUIRE(Vr.row(i) == V.row(15 - i));
}

TEST_CASE("linear embedder with zero bias is positively homogeneous") {
  const ArchitectureSpec arch = linear_arch(5, 3, 4);
  EmbedderParams params = init_params(arch, 17);
  params.tensors[1].value.setZero();
  RngStream rng(6);
  Trial trial = random_trial(rng, 5, 3);
  const Eigen::VectorXd once = forward(params, trial);
  trial.samples *= 2.0;
  const Eigen::VectorXd twice = forward(params, trial);
  REQUIRE(twice == 2.0 * once);
}

TEST_CASE("margin-satisfied batches give zero loss and zero gradients") {
  const ArchitectureSpec arch = linear_arch(2, 1, 2);
  EmbedderParams params = init_params(arch, 3);
  // Two well-separated class clusters along the first input dimension.
  params.tensors[0].value << 10, 0, 0, 10;
  params.tensors[1].value.setZero();
  std::vector<Trial> batch(4);
  std::vector<LabelVector> labels(4);
  for (int i = 0; i < 4; ++i) {
    batch[i].samples.resize(2, 1);
    const int cls = i % 2;
    batch[i].samples << (cls == 0 ? 1.0 : -1.0), 0.05 * i;
    labels[i] = {0, cls};
  }
  const LossAndGrads lg =
      loss_gradient(params, batch, labels, builtin_config("a"));
  REQUIRE(lg.loss == 0.0);
  for (const auto& g : lg.grads) REQUIRE(g.isZero(0.0));
}

TEST_CASE("zero-margin loss equals the hand hinge sum over embeddings") {
  const ArchitectureSpec arch = small_miniconv(12, 2, 3);
  const EmbedderParams params = init_params(arch, 23);
  RngStream rng(8);
  std::vector<Trial> batch;
  std::vector<LabelVector> labels;
  for (int i = 0; i < 8; ++i) {
    batch.push_back(random_trial(rng, 12, 2));
    labels.push_back({static_cast<int>(rng.uniform_index(2)),
                      static_cast<int>(rng.uniform_index(2))});
  }
  LossConfig config = builtin_config("b");
  for (auto& comp : config.components) comp.margin = 0.0;

  const LossAndGrads lg = loss_gradient(params, batch, labels, config);
  const Eigen::MatrixXd V = forward_batch(params, batch);
  std::vector<std::vector<int>> raw_labels;
  for (const auto& l : labels) raw_labels.push_back(l);
  const double by_hand = oracle::brute_force_product_ladder(V, raw_labels, config);
  REQUIRE(lg.loss == Catch::Approx(by_hand).epsilon(1e-12));
  REQUIRE(lg.loss > 0.0);
}

TEST_CASE("analytic gradients match central finite differences (linear)") {
  const ArchitectureSpec arch = linear_arch(8, 2, 4);
  const EmbedderParams params = init_params(arch, 31);
  RngStream rng(9);
  std::vector<Trial> batch;
  std::vector<LabelVector> labels;
  for (int i = 0; i < 8; ++i) {
    batch.push_back(random_trial(rng, 8, 2));
    labels.push_back({i % 2, (i / 2) % 2});
  }
  const LossConfig config = builtin_config("b");
  const LossAndGrads lg = loss_gradient(params, batch, labels, config);
  REQUIRE(lg.loss > 0.0);
  require_grads_close(lg.grads,
                      finite_difference_grads(params, batch, labels, config));
}

TEST_CASE("analytic gradients match central finite differences (miniconv)") {
  const ArchitectureSpec arch = small_miniconv(12, 3, 4);
  const EmbedderParams params = init_params(arch, 37);
  RngStream rng(10);
  std::vector<Trial> batch;
  std::vector<LabelVector> labels;
  for (int i = 0; i < 6; ++i) {
    batch.push_back(random_trial(rng, 12, 3));
    labels.push_back({i % 2, (i / 2) % 2});
  }
  for (const char* name : {"a", "d"}) {
    const LossConfig config = builtin_config(name);
    const LossAndGrads lg = loss_gradient(params, batch, labels, config);
    require_grads_close(lg.grads,
                        finite_difference_grads(params, batch, labels, config));
  }
}

TEST_CASE("checkpoints round-trip through float32 files") {
  const ArchitectureSpec arch = small_miniconv(16, 3, 5);
  Checkpoint ckpt;
  ckpt.params = init_params(arch, 77);
  ckpt.input_scale = 1.6180339887;
  const fs::path dir = fs::temp_directory_path() / "tsembed_test_ckpt";
  fs::remove_all(dir);
  save_checkpoint(ckpt, dir.string());
  const Checkpoint loaded = load_checkpoint(dir.string());
  REQUIRE(loaded.input_scale == ckpt.input_scale);
  REQUIRE(loaded.params.arch.kind == arch.kind);
  REQUIRE(loaded.params.arch.f1 == arch.f1);
  REQUIRE(loaded.params.tensors.size() == ckpt.params.tensors.size());
  for (std::size_t i = 0; i < loaded.params.tensors.size(); ++i) {
    const Eigen::MatrixXd& got = loaded.params.tensors[i].value;
    const Eigen::MatrixXd& want = ckpt.params.tensors[i].value;
    REQUIRE(got.rows() == want.rows());
    for (Eigen::Index r = 0; r < got.rows(); ++r)
      for (Eigen::Index c = 0; c < got.cols(); ++c)
        REQUIRE(got(r, c) == static_cast<double>(static_cast<float>(want(r, c))));
  }
  // Saving the loaded checkpoint reproduces identical bytes.
  const fs::path dir2 = fs::temp_directory_path() / "tsembed_test_ckpt2";
  fs::remove_all(dir2);
  save_checkpoint(loaded, dir2.string());
  REQUIRE(ioutil::read_binary_file((dir / "params.bin").string()) ==
          ioutil::read_binary_file((dir2 / "params.bin").string()));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("truncated checkpoint blob raises ShapeMismatch") {
  const ArchitectureSpec arch = linear_arch(4, 2, 2);
  Checkpoint ckpt;
  ckpt.params = init_params(arch, 1);
  const fs::path dir = fs::temp_directory_path() / "tsembed_test_ckpt_bad";
  fs::remove_all(dir);
  save_checkpoint(ckpt, dir.string());
  auto blob = ioutil::read_binary_file((dir / "params.bin").string());
  blob.resize(blob.size() - 4);
  ioutil::write_file((dir / "params.bin").string(), blob);
  REQUIRE_THROWS_AS(load_checkpoint(dir.string()), ShapeMismatch);
  fs::remove_all(dir);
}
