#include <doctest.h>

#include "dynamind/rsm/rsm.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <numeric>

using namespace dynamind;
using core::Matrix;
using core::Vector;
using nn::ParamStore;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

namespace {

rsm::RsmConfig tiny_rsm_config() {
  rsm::RsmConfig c;
  c.num_regions = 2;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.per_region_dim = 8;
  c.fused_dim = 10;
  c.dim_img = 6;
  c.dim_txt = 6;
  c.dim_cat = 4;
  c.num_classes = 5;
  return c;
}

std::vector<Matrix> random_blocks(RandomStream& rng, const std::vector<int>& channels, int t) {
  std::vector<Matrix> blocks;
  for (int c : channels) blocks.push_back(rng.randn(c, t));
  return blocks;
}

}  // namespace

TEST_CASE("encode_regions concatenates K per-region embeddings before projection") {
  RandomStream rng(1);
  auto cfg = tiny_rsm_config();
  rsm::RsmModel model(cfg, {3, 2}, rng);
  RandomStream drng(2);
  auto blocks = random_blocks(drng, {3, 2}, 24);

  Tape t;
  auto fused = model.encode_regions(t, blocks);
  CHECK(fused.concat.cols() == 2 * 8);  // K * per_region_dim
  CHECK(fused.fused.cols() == 10);

  // eval determinism
  Tape t2;
  auto fused2 = model.encode_regions(t2, blocks);
  CHECK((fused.fused.val() - fused2.fused.val()).cwiseAbs().maxCoeff() == 0.0);

  // wrong block count
  auto two_blocks = blocks;
  two_blocks.pop_back();
  CHECK_THROWS_AS(model.encode_regions(t, two_blocks), core::ConfigError);
}

TEST_CASE("paper-width regions: two regions at 512 concat to 1024") {
  RandomStream rng(3);
  auto cfg = tiny_rsm_config();
  cfg.per_region_dim = 512;
  cfg.fused_dim = 64;
  rsm::RsmModel model(cfg, {2, 2}, rng);
  RandomStream drng(4);
  auto blocks = random_blocks(drng, {2, 2}, 16);
  Tape t;
  CHECK(model.encode_regions(t, blocks).concat.cols() == 1024);
}

TEST_CASE("swapping region blocks changes the output for random weights") {
  RandomStream rng(5);
  auto cfg = tiny_rsm_config();
  rsm::RsmModel model(cfg, {2, 2}, rng);
  RandomStream drng(6);
  auto blocks = random_blocks(drng, {2, 2}, 24);
  auto swapped = blocks;
  std::swap(swapped[0], swapped[1]);

  Tape t;
  const Matrix a = model.encode_regions(t, blocks).fused.val();
  const Matrix b = model.encode_regions(t, swapped).fused.val();
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("dropped region makes the forward pass exactly invariant to its contents") {
  RandomStream rng(7);
  auto cfg = tiny_rsm_config();
  cfg.drop_region = 1;
  rsm::RsmModel model(cfg, {3, 2}, rng);
  RandomStream drng(8);
  auto blocks = random_blocks(drng, {3, 2}, 24);
  auto mutated = blocks;
  mutated[1] = drng.randn(2, 24, 10.0);

  const auto a = model.predict(blocks);
  const auto b = model.predict(mutated);
  CHECK((a.c_img - b.c_img).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.c_txt - b.c_txt).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("map_to_modalities output dims follow the config and zero final layers give zeros") {
  RandomStream rng(9);
  auto cfg = tiny_rsm_config();
  rsm::RsmModel model(cfg, {2, 2}, rng);
  RandomStream drng(10);
  auto blocks = random_blocks(drng, {2, 2}, 24);

  Tape t;
  auto triple = model.map_to_modalities(t, model.encode_regions(t, blocks).fused);
  CHECK(triple.c_img.cols() == cfg.dim_img);
  CHECK(triple.c_txt.cols() == cfg.dim_txt);
  CHECK(triple.c_cat.cols() == cfg.dim_cat);

  model.params().at("rsm.head_img.l2.w").value.setZero();
  model.params().at("rsm.head_img.l2.b").value.setZero();
  Tape t2;
  auto triple2 = model.map_to_modalities(t2, model.encode_regions(t2, blocks).fused);
  CHECK(triple2.c_img.val().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("modality head gradients match finite differences") {
  RandomStream rng(11);
  ParamStore ps;
  auto head = nn::Mlp::create(ps, "head", 5, 10, 4, rng);
  const Matrix f = rng.randn(2, 5);
  const Matrix target = rng.randn(2, 4);
  auto build = [&](Tape& t) { return nn::mse(head.apply(t, t.leaf(f)), t.leaf(target)); };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("info_nce hand-evaluated two-pair orthonormal case") {
  Tape t;
  Matrix pred(2, 2), target(2, 2);
  pred << 1, 0, 0, 1;
  target << 1, 0, 0, 1;
  const double loss = rsm::info_nce(t, t.leaf(pred), t.leaf(target), 1.0).scalar();
  CHECK(loss == doctest::Approx(0.3132616875182228).epsilon(1e-10));
}

TEST_CASE("info_nce single pair is exactly zero") {
  Tape t;
  Matrix pred(1, 3), target(1, 3);
  pred << 1, 2, 3;
  target << -1, 0.5, 2;
  CHECK(rsm::info_nce(t, t.leaf(pred), t.leaf(target), 0.07).scalar() == 0.0);
}

TEST_CASE("info_nce is invariant to positive row rescaling and symmetric in its arguments") {
  RandomStream rng(13);
  Matrix pred = rng.randn(4, 6), target = rng.randn(4, 6);
  Tape t;
  const double base = rsm::info_nce(t, t.leaf(pred), t.leaf(target), 0.5).scalar();

  Matrix scaled = pred;
  scaled.row(1) *= 17.0;
  scaled.row(3) *= 0.01;
  const double rescaled = rsm::info_nce(t, t.leaf(scaled), t.leaf(target), 0.5).scalar();
  CHECK(rescaled == doctest::Approx(base).epsilon(1e-12));

  const double swapped = rsm::info_nce(t, t.leaf(target), t.leaf(pred), 0.5).scalar();
  CHECK(swapped == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("info_nce positive-pair diagonal beats shuffled pairing on average") {
  RandomStream rng(15);
  double matched = 0.0, shuffled = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    Matrix a = rng.randn(6, 8);
    Tape t;
    matched += rsm::info_nce(t, t.leaf(a), t.leaf(a), 0.2).scalar();
    Matrix rolled(6, 8);
    for (int r = 0; r < 6; ++r) rolled.row(r) = a.row((r + 1) % 6);
    shuffled += rsm::info_nce(t, t.leaf(a), t.leaf(rolled), 0.2).scalar();
  }
  CHECK(matched < shuffled);
}

TEST_CASE("info_nce rejects zero-norm rows and bad temperature") {
  Tape t;
  Matrix pred = Matrix::Zero(2, 3);
  pred(0, 0) = 1.0;
  Matrix target = Matrix::Identity(2, 3);
  CHECK_THROWS_AS(rsm::info_nce(t, t.leaf(pred), t.leaf(target), 1.0), std::domain_error);
  Matrix ok = Matrix::Identity(2, 3);
  CHECK_THROWS_AS(rsm::info_nce(t, t.leaf(ok), t.leaf(target), 0.0), core::ValidationError);
}

TEST_CASE("info_nce gradients match finite differences") {
  RandomStream rng(17);
  ParamStore ps;
  auto lin = nn::Linear::create(ps, "emb", 4, 5, rng);
  const Matrix x = rng.randn(3, 4);
  const Matrix target = rng.randn(3, 5);
  auto build = [&](Tape& t) { return rsm::info_nce(t, lin.apply(t, t.leaf(x)), t.leaf(target), 0.3); };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("category_loss matches direct formula and handles edge cases") {
  Tape t;
  // uniform logits over 40 classes -> ln 40
  Matrix uniform = Matrix::Zero(3, 40);
  const double l40 = rsm::category_loss(t, t.leaf(uniform), {0, 7, 39}).scalar();
  CHECK(l40 == doctest::Approx(std::log(40.0)).epsilon(1e-12));

  // saturated correct logits -> ~0
  Matrix sat = Matrix::Zero(2, 5);
  sat(0, 2) = 1000.0;
  sat(1, 0) = 1000.0;
  CHECK(rsm::category_loss(t, t.leaf(sat), {2, 0}).scalar() == doctest::Approx(0.0).epsilon(1e-12));

  // random 3-class batch vs direct -sum y*log softmax
  RandomStream rng(19);
  Matrix logits = rng.randn(4, 3);
  const std::vector<int> labels = {2, 0, 1, 1};
  double direct = 0.0;
  for (int r = 0; r < 4; ++r) {
    Eigen::RowVector3d row = logits.row(r);
    const double m = row.maxCoeff();
    const double lse = std::log((row.array() - m).exp().sum()) + m;
    direct += lse - row[labels[std::size_t(r)]];
  }
  direct /= 4.0;
  CHECK(rsm::category_loss(t, t.leaf(logits), labels).scalar() == doctest::Approx(direct).epsilon(1e-10));

  CHECK_THROWS_AS(rsm::category_loss(t, t.leaf(logits), {0, 1, 2, 3}), core::ValidationError);
}

TEST_CASE("build_prior_condition concatenates in order and slices back exactly") {
  Tape t;
  rsm::SemanticTriple triple;
  RandomStream rng(21);
  Matrix ci = rng.randn(1, 8), ct = rng.randn(1, 8), cy = rng.randn(1, 4);
  triple.c_img = t.leaf(ci);
  triple.c_txt = t.leaf(ct);
  triple.c_cat = t.leaf(cy);
  Value cond = rsm::build_prior_condition(t, triple);
  CHECK(cond.cols() == 20);
  CHECK((cond.val().middleCols(0, 8) - ci).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cond.val().middleCols(8, 8) - ct).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cond.val().middleCols(16, 4) - cy).cwiseAbs().maxCoeff() == 0.0);

  rsm::SemanticTriple zero;
  zero.c_img = t.leaf(Matrix::Zero(1, 8));
  zero.c_txt = t.leaf(Matrix::Zero(1, 8));
  zero.c_cat = t.leaf(Matrix::Zero(1, 4));
  CHECK(rsm::build_prior_condition(t, zero).val().cwiseAbs().maxCoeff() == 0.0);
}

namespace {

rsm::PriorConfig tiny_prior_config() {
  rsm::PriorConfig c;
  c.dim_txt = 3;
  c.cond_dim = 4;
  c.width = 4;
  c.t_steps = 10;
  return c;
}

}  // namespace

TEST_CASE("prior loss trivial values") {
  RandomStream rng(23);
  rsm::PriorModel prior(tiny_prior_config(), rng);

  // zero network output => loss = mean ||target||^2 ... with x0-prediction the
  // all-zero prior predicts 0, so the loss is the mean squared target norm.
  for (nn::Param* p : prior.params().all()) p->value.setZero();
  Matrix cond = Matrix::Zero(2, 4);
  Matrix target(2, 3);
  target << 1, 2, 2, 0, 3, 4;
  Matrix noise = Matrix::Zero(2, 3);
  Tape t;
  const double loss = prior.loss(t, cond, target, {5, 7}, noise).scalar();
  CHECK(loss == doctest::Approx(target.array().square().mean()).epsilon(1e-12));

  CHECK_THROWS_AS(prior.loss(t, cond, target, {0, 7}, noise), core::ValidationError);
  CHECK_THROWS_AS(prior.loss(t, cond, target, {5, 11}, noise), core::ValidationError);
}

TEST_CASE("a prior that emits the clean target exactly has zero loss at any timestep") {
  RandomStream rng(24);
  rsm::PriorModel prior(tiny_prior_config(), rng);
  for (nn::Param* p : prior.params().all()) p->value.setZero();
  Matrix target(1, 3);
  target << 0.4, -1.2, 2.0;
  prior.params().at("prior.out.b").value = target;
  const Matrix cond = Matrix::Zero(1, 4);
  RandomStream nrng(99);
  const Matrix noise = nrng.randn(1, 3);
  for (int ts : {1, 5, 10}) {
    Tape t;
    CHECK(prior.loss(t, cond, target, {ts}, noise).scalar() == 0.0);
  }
}

TEST_CASE("prior gradients match finite differences on a tiny instance") {
  RandomStream rng(25);
  rsm::PriorModel prior(tiny_prior_config(), rng);
  RandomStream drng(26);
  const Matrix cond = drng.randn(2, 4);
  const Matrix target = drng.randn(2, 3);
  const Matrix noise = drng.randn(2, 3);
  const std::vector<int> ts = {3, 9};
  auto build = [&](Tape& t) { return prior.loss(t, cond, target, ts, noise); };
  CHECK(testing::max_rel_grad_error(prior.params(), build) < 1e-4);
}

TEST_CASE("prior sampling is deterministic in the seed with the right width") {
  RandomStream rng(27);
  rsm::PriorModel prior(tiny_prior_config(), rng);
  const Vector cond = Vector::Ones(4);
  RandomStream s1(5), s2(5), s3(6);
  const Vector a = prior.sample(cond, 8, s1);
  const Vector b = prior.sample(cond, 8, s2);
  const Vector c = prior.sample(cond, 8, s3);
  CHECK(a.size() == 3);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
  RandomStream s4(5);
  CHECK_THROWS_AS(prior.sample(cond, 0, s4), core::ValidationError);
}

TEST_CASE("alignment_loss equals the sum of its parts and reacts to ablation flags") {
  RandomStream rng(29);
  auto cfg = tiny_rsm_config();
  rsm::RsmModel model(cfg, {2, 2}, rng);
  RandomStream drng(30);

  Tape t;
  std::vector<Value> img_rows, txt_rows, cat_rows;
  for (int i = 0; i < 3; ++i) {
    auto blocks = random_blocks(drng, {2, 2}, 24);
    auto triple = model.map_to_modalities(t, model.encode_regions(t, blocks).fused);
    img_rows.push_back(triple.c_img);
    txt_rows.push_back(triple.c_txt);
    cat_rows.push_back(triple.c_cat);
  }
  rsm::AlignmentInputs in;
  in.pred_img = nn::concat_rows(img_rows);
  in.pred_txt = nn::concat_rows(txt_rows);
  in.pred_cat = nn::concat_rows(cat_rows);
  in.target_img = drng.randn(3, cfg.dim_img);
  in.target_txt = drng.randn(3, cfg.dim_txt);
  in.labels = {0, 2, 4};
  in.logits = model.category_logits(t, in.pred_cat);

  auto full = rsm::alignment_loss(t, in, cfg);
  const double sum = full.components["img"] + full.components["txt"] + full.components["category"];
  CHECK(full.total.scalar() == doctest::Approx(sum).epsilon(1e-10));

  auto no_txt_cfg = cfg;
  no_txt_cfg.use_text_loss = false;
  auto ablated = rsm::alignment_loss(t, in, no_txt_cfg);
  CHECK(std::abs(ablated.total.scalar() - full.total.scalar()) > 1e-9);
  CHECK(ablated.components["txt"] == 0.0);

  // with a prior term attached, the total shifts by exactly that term
  Value prior_term = t.leaf(Matrix::Constant(1, 1, 0.37));
  in.prior_term = prior_term;
  auto with_prior = rsm::alignment_loss(t, in, cfg);
  CHECK(with_prior.total.scalar() == doctest::Approx(full.total.scalar() + 0.37).epsilon(1e-10));
}

TEST_CASE("classify_direct: top-40 of 40 always hits, random scores sit at chance") {
  const auto table = core::AttributeTable::generic(40);
  RandomStream rng(31);
  std::vector<Vector> logits;
  std::vector<int> labels;
  for (int i = 0; i < 2000; ++i) {
    Vector v(40);
    for (int j = 0; j < 40; ++j) v[j] = rng.normal();
    logits.push_back(v);
    labels.push_back(int(rng.uniform_int(0, 39)));
  }
  const auto all = rsm::classify_direct(logits, labels, "40c", 40, table);
  CHECK(all.accuracy == 1.0);

  const auto top1 = rsm::classify_direct(logits, labels, "40c", 1, table);
  const double sigma = std::sqrt(0.025 * 0.975 / 2000.0);
  CHECK(std::abs(top1.accuracy - 0.025) < 4 * sigma);

  CHECK_THROWS_AS(rsm::classify_direct(logits, labels, "no_such_task", 1, table), core::ValidationError);
}

TEST_CASE("classify_direct meta tasks remap through the attribute table") {
  const auto table = core::AttributeTable::generic(9);
  // deterministic logits pointing at concept 4 (coarse 4 => human==1 under the generic table)
  std::vector<Vector> logits;
  std::vector<int> labels;
  Vector v = Vector::Zero(9);
  v[4] = 100.0;
  logits.push_back(v);
  labels.push_back(4);
  const auto rec = rsm::classify_direct(logits, labels, "human", 1, table);
  CHECK(rec.accuracy == 1.0);
  CHECK(rec.task == "human");
}
