#include <algorithm>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "mobyal/errors.hpp"
#include "mobyal/train/trainer.hpp"

using namespace mobyal;
using namespace mobyal::train;
using model::ModelConfig;

namespace {

ModelConfig toy_model_config() {
  ModelConfig c;
  c.in_channels = 1;
  c.num_classes = 2;
  c.widths = {4, 8, 8};
  c.projection_dim = 16;
  return c;
}

// Class 0 is bright in the top half, class 1 in the bottom half; horizontal
// flips and small crops keep them apart.
struct Toy {
  std::vector<Image> images;
  std::vector<int> labels;
};

Toy toy_set(std::size_t n, std::uint64_t seed) {
  Toy t;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    Image im(1, 8, 8);
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        const bool lit = (y == 0) == (r < 4);
        im.at(0, r, c) = static_cast<float>(std::clamp((lit ? 0.8 : 0.2) + 0.1 * rng.normal(), 0.0, 1.0));
      }
    }
    t.images.push_back(std::move(im));
    t.labels.push_back(y);
  }
  return t;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr.base_lr = 0.05;
  c.queue_capacity = 32;
  c.augment.crop_padding = 1;
  return c;
}

std::vector<float> flat(model::DualModel<float>& m, const char* prefix) {
  std::vector<float> out;
  for (auto& e : model::state_entries(m)) {
    if (e.name.starts_with(prefix)) out.insert(out.end(), e.values.begin(), e.values.end());
  }
  return out;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("supervised-only training fits a separable toy set") {
  const auto toy = toy_set(64, 1);
  auto m = model::init_model<float>(toy_model_config(), 2);
  contrastive::KeyQueuePair<float> q(32, 16);
  auto cfg = toy_train_config();
  cfg.epochs = 50;
  cfg.loss.lambda_c = 0.0;
  const auto report = train_stage(m, q, {toy.images, toy.labels}, {}, cfg, 3);
  REQUIRE(report.epochs.size() == 50);
  CHECK(report.epochs.back().classification_loss < 0.1);
  for (const auto& r : report.epochs) CHECK(r.contrastive_unlabelled == 0.0);
}

TEST_CASE("one record per epoch with finite losses") {
  const auto toy = toy_set(24, 4);
  const auto pool = toy_set(20, 5);
  auto m = model::init_model<float>(toy_model_config(), 6);
  contrastive::KeyQueuePair<float> q(32, 16);
  const auto report = train_stage(m, q, {toy.images, toy.labels}, pool.images, toy_train_config(), 7);
  REQUIRE(report.epochs.size() == 3);
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    const auto& r = report.epochs[i];
    CHECK(r.epoch == static_cast<int>(i) + 1);
    CHECK(std::isfinite(r.classification_loss));
    CHECK(std::isfinite(r.contrastive_labelled));
    CHECK(std::isfinite(r.contrastive_unlabelled));
    CHECK(r.learning_rate > 0.0);
  }
  // 3 labelled batches per epoch, each followed by an unlabelled one.
  CHECK(report.inferences == 18);
}

TEST_CASE("every inference enqueues one batch into each queue") {
  const auto toy = toy_set(32, 8);
  const auto pool = toy_set(40, 9);
  auto m = model::init_model<float>(toy_model_config(), 10);
  contrastive::KeyQueuePair<float> q(32, 16);
  auto cfg = toy_train_config();
  cfg.epochs = 2;
  const auto report = train_stage(m, q, {toy.images, toy.labels}, pool.images, cfg, 11);
  // Full batches only: 4 labelled + 4 unlabelled per epoch.
  CHECK(report.inferences == 16);
  CHECK(q.weak.total_enqueued() + q.strong.total_enqueued() == 2 * report.inferences * cfg.batch_size);
  CHECK(report.keys_enqueued == q.weak.total_enqueued());
  CHECK(q.weak.size() == 32);
  for (const auto* queue : {&q.weak, &q.strong}) {
    for (std::size_t i = 0; i < queue->size(); ++i) {
      double s = 0;
      for (float v : queue->row(i)) s += static_cast<double>(v) * v;
      CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("momentum fixed at one freezes the key side for the whole stage") {
  const auto toy = toy_set(24, 12);
  const auto pool = toy_set(24, 13);
  auto m = model::init_model<float>(toy_model_config(), 14);
  const auto key_before = flat(m, "key.");
  const auto query_before = flat(m, "query.");
  contrastive::KeyQueuePair<float> q(32, 16);
  auto cfg = toy_train_config();
  cfg.momentum_base = 1.0;
  cfg.momentum_end = 1.0;
  train_stage(m, q, {toy.images, toy.labels}, pool.images, cfg, 15);
  CHECK(bit_equal(flat(m, "key."), key_before));
  CHECK_FALSE(bit_equal(flat(m, "query."), query_before));
}

TEST_CASE("momentum zero keeps the key side equal to the query side") {
  const auto toy = toy_set(24, 16);
  auto m = model::init_model<float>(toy_model_config(), 17);
  contrastive::KeyQueuePair<float> q(32, 16);
  auto cfg = toy_train_config();
  cfg.momentum_base = 0.0;
  cfg.momentum_end = 0.0;
  train_stage(m, q, {toy.images, toy.labels}, {}, cfg, 18);
  for (const auto& e : model::state_entries(m)) {
    if (!e.name.starts_with("key.")) continue;
    const std::string twin = "query." + e.name.substr(4);
    bool found = false;
    for (const auto& f : model::state_entries(m)) {
      if (f.name != twin) continue;
      found = true;
      CHECK(std::equal(e.values.begin(), e.values.end(), f.values.begin()));
    }
    CHECK(found);
  }
}

TEST_CASE("key parameters never receive gradients") {
  const auto toy = toy_set(16, 19);
  const auto pool = toy_set(16, 20);
  auto m = model::init_model<float>(toy_model_config(), 21);
  contrastive::KeyQueuePair<float> q(32, 16);
  train_stage(m, q, {toy.images, toy.labels}, pool.images, toy_train_config(), 22);
  for (const auto& p : model::key_parameters(m)) {
    CHECK_FALSE(p.requires_grad());
    CHECK_FALSE(p.has_grad());
  }
}

TEST_CASE("an unlabelled step leaves the classifier untouched") {
  // With two labelled images and one epoch the stage is exactly one labelled
  // inference followed by one unlabelled inference. Running the same stage
  // without the unlabelled pool isolates the first.
  const auto toy = toy_set(2, 23);
  const auto pool = toy_set(8, 24);
  auto cfg = toy_train_config();
  cfg.epochs = 1;
  auto a = model::init_model<float>(toy_model_config(), 25);
  auto b = model::init_model<float>(toy_model_config(), 25);
  contrastive::KeyQueuePair<float> qa(32, 16), qb(32, 16);
  const auto ra = train_stage(a, qa, {toy.images, toy.labels}, pool.images, cfg, 26);
  const auto rb = train_stage(b, qb, {toy.images, toy.labels}, {}, cfg, 26);
  REQUIRE(ra.inferences == 2);
  REQUIRE(rb.inferences == 1);
  CHECK(bit_equal(flat(a, "query.classifier"), flat(b, "query.classifier")));
  CHECK_FALSE(bit_equal(flat(a, "query.encoder"), flat(b, "query.encoder")));
}

TEST_CASE("lambda zero matches cross-entropy-only updates bitwise") {
  const auto toy = toy_set(24, 27);
  auto cfg = toy_train_config();
  cfg.loss.lambda_c = 0.0;
  auto a = model::init_model<float>(toy_model_config(), 28);
  auto b = model::init_model<float>(toy_model_config(), 28);
  contrastive::KeyQueuePair<float> q(32, 16);
  train_stage(a, q, {toy.images, toy.labels}, {}, cfg, 29);
  train_finetune(b, {toy.images, toy.labels}, cfg, cfg.epochs, 29);
  CHECK(bit_equal(flat(a, "query.encoder"), flat(b, "query.encoder")));
  CHECK(bit_equal(flat(a, "query.classifier"), flat(b, "query.classifier")));
  // The projector never sees a gradient without the contrastive term.
  auto fresh = model::init_model<float>(toy_model_config(), 28);
  CHECK(bit_equal(flat(a, "query.projector"), flat(fresh, "query.projector")));
}

TEST_CASE("training is bit-deterministic") {
  const auto toy = toy_set(24, 30);
  const auto pool = toy_set(30, 31);
  auto run = [&](std::vector<float>& state, StageReport& report) {
    auto m = model::init_model<float>(toy_model_config(), 32);
    contrastive::KeyQueuePair<float> q(32, 16);
    report = train_stage(m, q, {toy.images, toy.labels}, pool.images, toy_train_config(), 33);
    state = flat(m, "");
  };
  std::vector<float> s1, s2;
  StageReport r1, r2;
  run(s1, r1);
  run(s2, r2);
  CHECK(bit_equal(s1, s2));
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    CHECK(r1.epochs[i].classification_loss == r2.epochs[i].classification_loss);
    CHECK(r1.epochs[i].contrastive_labelled == r2.epochs[i].contrastive_labelled);
    CHECK(r1.epochs[i].contrastive_unlabelled == r2.epochs[i].contrastive_unlabelled);
    CHECK(r1.epochs[i].momentum == r2.epochs[i].momentum);
  }
}

TEST_CASE("training errors") {
  const auto toy = toy_set(8, 34);
  auto m = model::init_model<float>(toy_model_config(), 35);
  contrastive::KeyQueuePair<float> q(32, 16);
  CHECK_THROWS_AS(train_stage(m, q, {}, {}, toy_train_config(), 1), TrainingError);
  auto bad = toy_train_config();
  bad.epochs = 0;
  CHECK_THROWS_AS(train_stage(m, q, {toy.images, toy.labels}, {}, bad, 1), ConfigError);
  bad = toy_train_config();
  bad.batch_size = 1;
  CHECK_THROWS_AS(train_stage(m, q, {toy.images, toy.labels}, {}, bad, 1), ConfigError);
  auto diverge = toy_train_config();
  diverge.lr.base_lr = 1e30;
  CHECK_THROWS_AS(train_stage(m, q, {toy.images, toy.labels}, {}, diverge, 1), TrainingError);
}

TEST_CASE("multi-stage training") {
  const auto toy = toy_set(24, 36);
  const auto pool = toy_set(24, 37);
  auto cfg = toy_train_config();

  SUBCASE("stages and lengths") {
    auto m = model::init_model<float>(toy_model_config(), 38);
    contrastive::KeyQueuePair<float> q(32, 16);
    cfg.epochs = 4;
    const auto reports = train_multi_stage(m, q, {toy.images, toy.labels}, pool.images, cfg, 39);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].stage == "pretrain");
    CHECK(reports[0].epochs.size() == 4);
    CHECK(reports[1].stage == "finetune");
    CHECK(reports[1].epochs.size() == 2);
    for (const auto& r : reports[0].epochs) CHECK(r.classification_loss == 0.0);
  }
  SUBCASE("pretraining sees images only and is deterministic") {
    // train_pretrain has no label parameter, so labels cannot reach it.
    auto a = model::init_model<float>(toy_model_config(), 40);
    auto b = model::init_model<float>(toy_model_config(), 40);
    contrastive::KeyQueuePair<float> qa(32, 16), qb(32, 16);
    std::vector<Image> all = toy.images;
    all.insert(all.end(), pool.images.begin(), pool.images.end());
    train_pretrain(a, qa, all, cfg, 2, 41);
    train_pretrain(b, qb, all, cfg, 2, 41);
    CHECK(bit_equal(flat(a, ""), flat(b, "")));
  }
  SUBCASE("zero pretraining epochs is supervised-only training") {
    auto a = model::init_model<float>(toy_model_config(), 42);
    auto b = model::init_model<float>(toy_model_config(), 42);
    contrastive::KeyQueuePair<float> q(32, 16);
    const auto pre = train_pretrain(a, q, toy.images, cfg, 0, 43);
    CHECK(pre.epochs.empty());
    CHECK(pre.inferences == 0);
    train_finetune(a, {toy.images, toy.labels}, cfg, 2, 44);
    train_finetune(b, {toy.images, toy.labels}, cfg, 2, 44);
    CHECK(bit_equal(flat(a, ""), flat(b, "")));
    CHECK(q.weak.empty());
  }
}

TEST_CASE("unlabelled subset selection") {
  const auto pool = toy_set(10, 45);
  std::vector<std::uint64_t> ids(10);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 100 + i;
  contrastive::ScoreOptions opts;

  SUBCASE("the whole pool in both modes") {
    auto m = model::init_model<float>(toy_model_config(), 46);
    contrastive::KeyQueuePair<float> q(32, 16);
    for (auto mode : {SubsetMode::Random, SubsetMode::LowestLoss}) {
      CHECK(select_unlabelled_training_subset(&m, &q, pool.images, ids, 10, mode, 1, opts) == ids);
    }
  }
  SUBCASE("empty queues give zero scores, ties by ascending id") {
    auto m = model::init_model<float>(toy_model_config(), 47);
    contrastive::KeyQueuePair<float> q(32, 16);
    const auto got = select_unlabelled_training_subset(&m, &q, pool.images, ids, 4, SubsetMode::LowestLoss, 2, opts);
    CHECK(got == std::vector<std::uint64_t>{100, 101, 102, 103});
  }
  SUBCASE("order statistics") {
    const std::vector<double> scores{0.1, 0.9, 0.4};
    const std::vector<std::uint64_t> abc{0, 1, 2};
    CHECK(lowest_score_ids(scores, abc, 2) == std::vector<std::uint64_t>{0, 2});
  }
  SUBCASE("lowest loss against filled queues") {
    auto m = model::init_model<float>(toy_model_config(), 48);
    contrastive::KeyQueuePair<float> q(32, 16);
    const auto toy = toy_set(16, 49);
    train_stage(m, q, {toy.images, toy.labels}, pool.images, toy_train_config(), 50);
    const auto got = select_unlabelled_training_subset(&m, &q, pool.images, ids, 3, SubsetMode::LowestLoss, 3, opts);
    const auto scores = contrastive::per_sample_contrastive_scores(m, q, pool.images, ids, derive_seed(3, {5}), opts);
    std::vector<std::size_t> order(10);
    for (std::size_t i = 0; i < 10; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return scores[x] < scores[y]; });
    std::vector<std::uint64_t> expect{ids[order[0]], ids[order[1]], ids[order[2]]};
    std::sort(expect.begin(), expect.end());
    CHECK(got == expect);
  }
  SUBCASE("random mode is seeded and sorted") {
    const auto a = select_unlabelled_training_subset(nullptr, nullptr, pool.images, ids, 5, SubsetMode::Random, 9, opts);
    const auto b = select_unlabelled_training_subset(nullptr, nullptr, pool.images, ids, 5, SubsetMode::Random, 9, opts);
    CHECK(a == b);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
  }
  SUBCASE("first cycle falls back to random") {
    const auto a =
        select_unlabelled_training_subset(nullptr, nullptr, pool.images, ids, 5, SubsetMode::LowestLoss, 9, opts);
    const auto b = select_unlabelled_training_subset(nullptr, nullptr, pool.images, ids, 5, SubsetMode::Random, 9, opts);
    CHECK(a == b);
  }
  SUBCASE("size larger than the pool") {
    CHECK_THROWS_AS(select_unlabelled_training_subset(nullptr, nullptr, pool.images, ids, 11, SubsetMode::Random, 1,
                                                      opts),
                    ContractError);
  }
}
