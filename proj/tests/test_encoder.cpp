#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "binalign/checkpoint.hpp"
#include "binalign/corpus.hpp"
#include "binalign/encoder.hpp"
#include "binalign/rng.hpp"
#include "fd_check.hpp"
#include "naive_encoder.hpp"

using namespace binalign;

namespace {

ModelConfig tiny_config(int vocab = 24) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.ffn_dim = 16;
  cfg.max_len = 32;
  cfg.vocab_size = vocab;
  return cfg;
}

SubwordVocabulary letters_vocab(int extra_letters) {
  SubwordVocabulary v;
  int id = 0;
  for (const auto& s : SubwordVocabulary::special_tokens()) v.entries.emplace(s, id++);
  for (int k = 0; k < extra_letters; ++k) {
    v.entries.emplace(std::string(1, static_cast<char>('a' + k)), id++);
  }
  v.rebuild_index();
  return v;
}

bool params_equal(const Parameters<float>& a, const Parameters<float>& b) {
  auto ba = param_blocks(a);
  auto bb = param_blocks(b);
  if (ba.size() != bb.size()) return false;
  for (std::size_t k = 0; k < ba.size(); ++k) {
    if (ba[k].size != bb[k].size) return false;
    if (std::memcmp(ba[k].data, bb[k].data,
                    static_cast<std::size_t>(ba[k].size) * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.d_model = 10;  // not divisible by n_heads = 2? it is; use 7
  cfg.d_model = 7;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.vocab_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("parameter blocks and initialization") {
  const ModelConfig cfg = tiny_config();
  Parameters<float> p = init_params<float>(cfg, 3);

  SUBCASE("expected parameter count") {
    const long long d = cfg.d_model, f = cfg.ffn_dim, L = cfg.n_layers;
    const long long expect = cfg.vocab_size * d + 2 * d + cfg.max_len * d +
                             L * (4 * d * d + d * f + f + f * d + d + 4 * d) +
                             d + 1;
    CHECK(param_count(p) == expect);
  }
  SUBCASE("block inventory") {
    auto blocks = param_blocks(p);
    CHECK(blocks.size() == 3 + 12 * 2 + 2);
    CHECK(blocks[0].name == "tok_embed");
    CHECK(blocks[2].name == "pos_enc");
    CHECK_FALSE(blocks[2].learned);
    CHECK(blocks.back().name == "b_head");
    CHECK(blocks.back().size == 1);
    for (const auto& b : blocks) {
      if (b.name != "pos_enc") CHECK(b.learned);
    }
  }
  SUBCASE("init is deterministic and seed-sensitive") {
    CHECK(params_equal(p, init_params<float>(cfg, 3)));
    CHECK_FALSE(params_equal(p, init_params<float>(cfg, 4)));
  }
  SUBCASE("weights stay inside the scaled-uniform bound") {
    const double lim = std::sqrt(6.0 / (cfg.vocab_size + cfg.d_model));
    CHECK(p.tok_embed.cwiseAbs().maxCoeff() <= lim);
    CHECK(p.tok_embed.cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("norm scales start at one, biases at zero") {
    for (const auto& lp : p.layers) {
      CHECK(lp.ln1_scale.isOnes());
      CHECK(lp.ln2_offset.isZero());
      CHECK(lp.b1.isZero());
      CHECK(lp.b2.isZero());
    }
    CHECK(p.b_head == 0.0f);
  }
  SUBCASE("sinusoidal position table") {
    CHECK(p.pos_enc(0, 0) == doctest::Approx(0.0));
    CHECK(p.pos_enc(0, 1) == doctest::Approx(1.0));
    CHECK(p.pos_enc(3, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(p.pos_enc(3, 1) == doctest::Approx(std::cos(3.0)));
    const double angle = 3.0 / std::pow(10000.0, 2.0 / cfg.d_model);
    CHECK(p.pos_enc(3, 2) == doctest::Approx(std::sin(angle)));
  }
}

TEST_CASE("span marking and input construction") {
  SubwordVocabulary v = letters_vocab(6);
  const ModelConfig cfg = tiny_config(v.size());

  SentencePair pair;
  pair.source = WordSequence::from_line("ab c");
  pair.target = WordSequence::from_line("de f");
  TokenizedPair tp = tokenize_pair(pair, v);

  SUBCASE("mark_span adds exactly two tokens around the word") {
    auto marked = mark_span(tp.src_tok.token_ids, 0, tp.src_map);
    REQUIRE(marked.size() == tp.src_tok.token_ids.size() + 2);
    CHECK(marked[0] == SubwordVocabulary::kMarkOpen);
    CHECK(marked[3] == SubwordVocabulary::kMarkClose);
    CHECK_THROWS_AS(mark_span(tp.src_tok.token_ids, 2, tp.src_map),
                    std::out_of_range);
  }
  SUBCASE("encoded layout") {
    EncodedInput in = build_encoded_input(tp, Direction::kForwardXtoY, 1, cfg);
    // [CLS] a b [MARK] c [/MARK] [SEP] d e f [SEP]
    REQUIRE(in.ids.size() == 11);
    CHECK(in.ids[0] == SubwordVocabulary::kCls);
    CHECK(in.ids[3] == SubwordVocabulary::kMarkOpen);
    CHECK(in.ids[5] == SubwordVocabulary::kMarkClose);
    CHECK(in.ids[6] == SubwordVocabulary::kSep);
    CHECK(in.ids[10] == SubwordVocabulary::kSep);
    CHECK(in.segments == std::vector<int>{0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1});
    CHECK(in.target_positions == std::vector<int>{7, 8, 9});
    CHECK_NOTHROW(in.validate(cfg));
  }
  SUBCASE("reverse direction marks the target side") {
    EncodedInput in = build_encoded_input(tp, Direction::kReverseYtoX, 0, cfg);
    // [CLS] [MARK] d e [/MARK] f [SEP] a b c [SEP]
    CHECK(in.ids[1] == SubwordVocabulary::kMarkOpen);
    CHECK(in.target_positions == std::vector<int>{7, 8, 9});
  }
  SUBCASE("too-long pairs are rejected, not truncated") {
    ModelConfig small = cfg;
    small.max_len = 8;
    try {
      build_encoded_input(tp, Direction::kForwardXtoY, 0, small);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      CHECK(msg.find("max_len") != std::string::npos);
      CHECK(msg.find("forward") != std::string::npos);
    }
  }
}

TEST_CASE("forward pass matches the scalar-loop oracle") {
  Rng rng(900);
  for (int trial = 0; trial < 6; ++trial) {
    ModelConfig cfg;
    cfg.d_model = 4 * rng.range(1, 3);
    cfg.n_heads = rng.range(1, 2);
    while (cfg.d_model % cfg.n_heads) cfg.n_heads = rng.range(1, 2);
    cfg.n_layers = rng.range(1, 3);
    cfg.ffn_dim = 4 * rng.range(1, 4);
    cfg.max_len = 24;
    cfg.vocab_size = 20;
    Parameters<double> p = init_params<double>(cfg, derive_seed(900, trial));

    EncodedInput in;
    Vec<double> labels;
    fdcheck::random_item(rng, cfg, trial % 2 == 0, in, labels);

    Mat<double> ours = encode_hidden(in.ids, in.segments, p, cfg);
    naive::Grid theirs = naive::encode(in.ids, in.segments, p, cfg);
    for (Index r = 0; r < ours.rows(); ++r) {
      for (Index c = 0; c < ours.cols(); ++c) {
        CHECK(std::abs(ours(r, c) -
                       theirs[static_cast<std::size_t>(r)]
                             [static_cast<std::size_t>(c)]) <= 1e-10);
      }
    }
    Vec<double> z = forward(in, p, cfg);
    auto z_oracle = naive::logits(in, p, cfg);
    for (Index k = 0; k < z.size(); ++k) {
      CHECK(std::abs(z(k) - z_oracle[static_cast<std::size_t>(k)]) <= 1e-10);
    }
  }
}

TEST_CASE("padding does not change real positions") {
  const ModelConfig cfg = tiny_config(20);
  Parameters<double> p = init_params<double>(cfg, 5);
  Rng rng(41);
  EncodedInput in;
  Vec<double> labels;
  fdcheck::random_item(rng, cfg, false, in, labels);

  Vec<double> base = forward(in, p, cfg);
  EncodedInput padded = in;
  for (int k = 0; k < 7; ++k) {
    padded.ids.push_back(SubwordVocabulary::kPad);
    padded.segments.push_back(0);
  }
  Vec<double> with_pad = forward(padded, p, cfg);
  for (Index k = 0; k < base.size(); ++k) {
    CHECK(std::abs(base(k) - with_pad(k)) <= 1e-12);
  }
}

TEST_CASE("loss at zero logits is ln 2") {
  const ModelConfig cfg = tiny_config(20);
  Parameters<double> zero_d = make_zero_params<double>(cfg);
  Parameters<float> zero_f = make_zero_params<float>(cfg);
  Rng rng(17);
  for (int t = 0; t < 5; ++t) {
    EncodedInput in;
    Vec<double> labels_d;
    fdcheck::random_item(rng, cfg, t % 2 == 1, in, labels_d);
    auto lg = loss_and_grad<double>({&in}, {&labels_d}, zero_d, cfg);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    Vec<float> labels_f = labels_d.cast<float>();
    auto lf = loss_and_grad<float>({&in}, {&labels_f}, zero_f, cfg);
    CHECK(lf.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("clamped cross entropy terms") {
  double dz = 0.0;
  SUBCASE("zero logit") {
    CHECK(detail::bce_term(0.0, 1.0, dz) == doctest::Approx(std::log(2.0)));
    CHECK(dz == doctest::Approx(-0.5));
    CHECK(detail::bce_term(0.0, 0.0, dz) == doctest::Approx(std::log(2.0)));
    CHECK(dz == doctest::Approx(0.5));
  }
  SUBCASE("saturated logit clamps the loss and zeroes the gradient") {
    CHECK(detail::bce_term(-100.0, 1.0, dz) == 30.0);
    CHECK(dz == 0.0);
    CHECK(detail::bce_term(100.0, 0.0, dz) == 30.0);
    CHECK(dz == 0.0);
  }
  SUBCASE("moderately negative logit keeps its gradient") {
    const double loss = detail::bce_term(-20.0, 1.0, dz);
    CHECK(loss == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(dz == doctest::Approx(stable_sigmoid(-20.0) - 1.0));
  }
  SUBCASE("gradient is sigmoid minus label in the linear region") {
    for (double z : {-3.0, -0.5, 0.25, 2.0}) {
      for (double a : {0.0, 1.0}) {
        detail::bce_term(z, a, dz);
        CHECK(dz == doctest::Approx(stable_sigmoid(z) - a).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed : {100, 101, 102}) {
    ModelConfig cfg = tiny_config(20);
    auto res = fdcheck::run(cfg, seed, /*coords_per_block=*/2);
    INFO("seed ", seed, " worst block ", res.worst_block);
    CHECK(res.max_rel_err <= 1e-4);
  }
}

TEST_CASE("gradients are correct under fixed dropout masks") {
  ModelConfig cfg = tiny_config(20);
  cfg.dropout_rate = 0.3;
  Parameters<double> p = init_params<double>(cfg, 9);
  Rng rng(12);
  EncodedInput in;
  Vec<double> labels;
  fdcheck::random_item(rng, cfg, false, in, labels);
  Rng mask_rng(55);
  const DropoutMasks<double> masks =
      draw_dropout_masks<double>(static_cast<Index>(in.ids.size()), cfg, mask_rng);

  auto eval = [&](const Parameters<double>& q) {
    detail::ItemResult<double> out;
    detail::item_loss_grad(in.ids, in.segments, in.target_positions, labels, q,
                           cfg, &masks, out);
    return out;
  };
  const auto base = eval(p);
  auto p_blocks = param_blocks(p);
  auto g_blocks = param_blocks(base.grads);
  Rng pick(77);
  const double h = 1e-4;
  for (int c = 0; c < 40; ++c) {
    const std::size_t b = pick.below(p_blocks.size());
    if (p_blocks[b].size == 0) continue;
    const Index k = static_cast<Index>(
        pick.below(static_cast<std::uint64_t>(p_blocks[b].size)));
    const double saved = p_blocks[b].data[k];
    p_blocks[b].data[k] = saved + h;
    const double up = eval(p).loss_sum;
    p_blocks[b].data[k] = saved - h;
    const double down = eval(p).loss_sum;
    p_blocks[b].data[k] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = g_blocks[b].data[k];
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}) <=
          1e-4);
  }
}

TEST_CASE("batch loss is invariant to thread count") {
  const ModelConfig cfg = tiny_config(20);
  Parameters<float> p = init_params<float>(cfg, 21);
  Rng rng(7);
  std::vector<EncodedInput> ins(6);
  std::vector<Vec<float>> lbs(6);
  std::vector<const EncodedInput*> ip;
  std::vector<const Vec<float>*> lp;
  for (int i = 0; i < 6; ++i) {
    Vec<double> ld;
    fdcheck::random_item(rng, cfg, i % 2 == 0, ins[static_cast<std::size_t>(i)], ld);
    lbs[static_cast<std::size_t>(i)] = ld.cast<float>();
    ip.push_back(&ins[static_cast<std::size_t>(i)]);
    lp.push_back(&lbs[static_cast<std::size_t>(i)]);
  }
  auto a = loss_and_grad(ip, lp, p, cfg, 1);
  auto b = loss_and_grad(ip, lp, p, cfg, 3);
  CHECK(a.loss == b.loss);
  auto ba = param_blocks(a.grads);
  auto bb = param_blocks(b.grads);
  for (std::size_t k = 0; k < ba.size(); ++k) {
    CHECK(std::memcmp(ba[k].data, bb[k].data,
                      static_cast<std::size_t>(ba[k].size) * sizeof(float)) == 0);
  }
}

TEST_CASE("dropout is off at inference and deterministic in the seed") {
  ModelConfig cfg = tiny_config(20);
  cfg.dropout_rate = 0.4;
  Parameters<float> p = init_params<float>(cfg, 2);
  Rng rng(3);
  EncodedInput in;
  Vec<double> ld;
  fdcheck::random_item(rng, cfg, false, in, ld);
  Vec<float> lb = ld.cast<float>();

  auto no_rng = loss_and_grad<float>({&in}, {&lb}, p, cfg, 1, nullptr);
  ModelConfig plain = cfg;
  plain.dropout_rate = 0.0;
  auto no_drop = loss_and_grad<float>({&in}, {&lb}, p, plain, 1, nullptr);
  CHECK(no_rng.loss == no_drop.loss);

  Rng d1(9), d2(9), d3(10);
  auto r1 = loss_and_grad<float>({&in}, {&lb}, p, cfg, 1, &d1);
  auto r2 = loss_and_grad<float>({&in}, {&lb}, p, cfg, 1, &d2);
  auto r3 = loss_and_grad<float>({&in}, {&lb}, p, cfg, 1, &d3);
  CHECK(r1.loss == r2.loss);
  CHECK(r1.loss != r3.loss);
  CHECK(r1.loss != no_drop.loss);
}

TEST_CASE("adam steps") {
  const ModelConfig cfg = tiny_config(8);
  SUBCASE("first step is a signed unit step scaled by lr") {
    Parameters<float> p = make_zero_params<float>(cfg);
    Parameters<float> g = make_zero_params<float>(cfg);
    g.layers[0].wq(1, 2) = 0.25f;
    AdamState<float> st = AdamState<float>::zeros(cfg);
    adam_step(p, g, st, 0.01f);
    // mhat = g, vhat = g^2 at step 1, so dp = -lr * g / (|g| + eps).
    const float expect = -0.01f * 0.25f / (0.25f + 1e-8f);
    CHECK(p.layers[0].wq(1, 2) == doctest::Approx(expect));
    CHECK(p.layers[0].wq(0, 0) == 0.0f);
  }
  SUBCASE("position table is never updated") {
    Parameters<float> p = init_params<float>(cfg, 1);
    const Mat<float> before = p.pos_enc;
    Parameters<float> g = make_zero_params<float>(cfg);
    g.pos_enc.setConstant(1.0f);
    g.w_head.setConstant(1.0f);
    AdamState<float> st = AdamState<float>::zeros(cfg);
    adam_step(p, g, st, 0.1f);
    CHECK((p.pos_enc.array() == before.array()).all());
    CHECK(p.w_head(0) != init_params<float>(cfg, 1).w_head(0));
  }
  SUBCASE("non-finite gradients are rejected") {
    Parameters<float> p = make_zero_params<float>(cfg);
    Parameters<float> g = make_zero_params<float>(cfg);
    g.w_head(0) = std::numeric_limits<float>::quiet_NaN();
    AdamState<float> st = AdamState<float>::zeros(cfg);
    try {
      adam_step(p, g, st, 0.1f);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("w_head") != std::string::npos);
    }
  }
}

TEST_CASE("checkpoint round trip and corruption handling") {
  SubwordVocabulary v = letters_vocab(4);
  Checkpoint ckpt;
  ckpt.config = tiny_config(v.size());
  ckpt.vocab = v;
  ckpt.params = init_params<float>(ckpt.config, 77);
  ckpt.epochs_seen = 3;
  ckpt.init_seed = 77;

  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.config == ckpt.config);
  CHECK(back.vocab.entries == ckpt.vocab.entries);
  CHECK(back.epochs_seen == 3);
  CHECK(back.init_seed == 77);
  CHECK(params_equal(back.params, ckpt.params));
  CHECK(serialize_checkpoint(back) == bytes);  // bit-exact round trip

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), std::runtime_error);
  }
  SUBCASE("truncation at any point") {
    for (std::size_t cut : {std::size_t{3}, std::size_t{12}, bytes.size() - 5}) {
      CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)),
                      std::runtime_error);
    }
  }
  SUBCASE("trailing garbage") {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "xx"), std::runtime_error);
  }
  SUBCASE("vocab and config must agree") {
    Checkpoint broken = ckpt;
    broken.config.vocab_size += 1;
    CHECK_THROWS_AS(serialize_checkpoint(broken), std::invalid_argument);
  }
}
