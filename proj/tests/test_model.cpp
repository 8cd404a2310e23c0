#include <doctest.h>

#include <cmath>

#include "adadec/model.hpp"

using namespace adadec;

namespace {

ModelConfig small_config(Variant v, CellKind cell = CellKind::Lstm, std::size_t d = 6, std::size_t r = 0) {
  ModelConfig c;
  c.variant = v;
  c.cell = cell;
  c.vocab_size = 15;
  c.embed_dim = 5;
  c.encoder_hidden = 4;
  c.decoder_hidden = d;
  c.rank = r;
  c.exemplar_hidden = 3;
  return c;
}

void zero_all(ParameterSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).fill(0.0);
}

Tensor random_tensor(Shape s, RandomStream& rng) {
  Tensor t(std::move(s));
  for (double& x : t.data()) x = rng.uniform(-1, 1);
  return t;
}

AdaptiveFactorBank random_bank(std::size_t d, std::size_t e, std::size_t r, std::size_t gates, RandomStream& rng) {
  AdaptiveFactorBank bank;
  bank.hidden = d;
  bank.rank = r;
  for (std::size_t g = 0; g < gates; ++g) {
    bank.gates.push_back({random_tensor({d, r}, rng), random_tensor({d, r}, rng), random_tensor({d, r}, rng),
                          random_tensor({e, r}, rng), random_tensor({d, r}, rng)});
  }
  return bank;
}

const TokenSequence kSource = {5, 6, 7, 8, kEos};
const TokenSequence kExemplar = {9, 10, 6, kEos};

std::vector<double> probs(const Tape& tape, Var log_probs) {
  std::vector<double> p;
  for (double x : tape.value(log_probs).data()) p.push_back(std::exp(x));
  return p;
}

}  // namespace

TEST_CASE("variant and cell names") {
  for (Variant v : {Variant::Seq2Seq, Variant::AttExp, Variant::AdaDec, Variant::AdaDecAttExp})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(Variant::AdaDecAttExp) == "adadec+attexp");
  CHECK(parse_cell("elman") == CellKind::Elman);
  CHECK_THROWS(parse_variant("transformer"));
  CHECK(uses_exemplar(Variant::AttExp));
  CHECK_FALSE(uses_exemplar(Variant::Seq2Seq));
  CHECK(is_adaptive(Variant::AdaDecAttExp));
  CHECK_FALSE(is_adaptive(Variant::AttExp));
}

TEST_CASE("config validation") {
  ModelConfig c = small_config(Variant::AdaDec);
  CHECK_NOTHROW(c.validate());
  c.vocab_size = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_config(Variant::AdaDec);
  c.attention = false;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // copy needs attention
  c.copy = false;
  CHECK_NOTHROW(c.validate());
  CHECK(model_config_from_json(model_config_to_json(small_config(Variant::AttExp))).variant == Variant::AttExp);
}

TEST_CASE("zero encoder weights give zero states") {
  Seq2SeqModel m(small_config(Variant::Seq2Seq), 1);
  zero_all(m.params());
  Tape tape;
  EncodedSource enc = m.encode_source(tape, kSource);
  CHECK(enc.states.size() == 4);
  for (Var s : enc.states)
    for (double x : tape.value(s).data()) CHECK(x == 0.0);
  for (double x : tape.value(enc.initial_state).data()) CHECK(x == 0.0);
}

TEST_CASE("single token source has one state") {
  Seq2SeqModel m(small_config(Variant::Seq2Seq), 1);
  Tape tape;
  EncodedSource enc = m.encode_source(tape, {5, kEos});
  CHECK(enc.states.size() == 1);
  CHECK(tape.value(enc.memory).shape() == Shape{1, 8});
  CHECK_THROWS(m.encode_source(tape, {kEos}));
}

TEST_CASE("stacked encoder layers") {
  ModelConfig c = small_config(Variant::Seq2Seq);
  c.encoder_layers = 3;
  Seq2SeqModel m(c, 2);
  Tape tape;
  EncodedSource enc = m.encode_source(tape, kSource);
  CHECK(enc.states.size() == 4);
  CHECK(count_parameters(c).total() == m.params().scalar_count());
}

TEST_CASE("zero exemplar encoder gives a zero representation") {
  Seq2SeqModel m(small_config(Variant::AdaDec), 1);
  zero_all(m.params());
  Tape tape;
  EncodedExemplar ex = m.encode_exemplar(tape, kExemplar);
  for (double x : tape.value(ex.representation).data()) CHECK(x == 0.0);
}

TEST_CASE("single token exemplar depends only on that embedding") {
  Seq2SeqModel m(small_config(Variant::AdaDec), 3);
  Tape t1;
  const Tensor a1 = t1.value(m.encode_exemplar(t1, {9, kEos}).representation);
  Tensor& emb = m.params().value(m.params().id("embedding"));
  for (std::size_t r = 0; r < emb.rows(); ++r)
    if (r != 9)
      for (std::size_t k = 0; k < emb.cols(); ++k) emb.at(r, k) += 0.37;
  Tape t2;
  CHECK(t2.value(m.encode_exemplar(t2, {9, kEos}).representation) == a1);
  emb.at(9, 0) += 0.5;
  Tape t3;
  CHECK_FALSE(t3.value(m.encode_exemplar(t3, {9, kEos}).representation) == a1);
}

TEST_CASE("coefficients are rescaled projections") {
  Tensor lambda = compute_coefficients(Tensor::vector({3, 4}), Tensor::identity(2), 2);
  CHECK(lambda[0] == doctest::Approx(3 * std::sqrt(2.0) / 5).epsilon(1e-12));
  CHECK(lambda[1] == doctest::Approx(4 * std::sqrt(2.0) / 5).epsilon(1e-12));
  CHECK(lambda[0] == doctest::Approx(0.8485).epsilon(1e-4));
  CHECK(lambda[1] == doctest::Approx(1.1314).epsilon(1e-4));
  CHECK_THROWS_AS(compute_coefficients(Tensor::vector({0, 0}), Tensor::identity(2), 2), NumericError);

  RandomStream rng(8);
  for (int i = 0; i < 50; ++i) {
    const std::size_t d = 1 + rng.below(10), r = 1 + rng.below(10);
    Tensor l = compute_coefficients(random_tensor({6}, rng), random_tensor({r, 6}, rng), d);
    CHECK(l2_norm(l.data()) == doctest::Approx(std::sqrt(double(d))).epsilon(1e-12));
  }
}

TEST_CASE("one-hot coefficients select one rank-1 component") {
  RandomStream rng(4);
  const std::size_t d = 5, e = 3, r = 4;
  AdaptiveFactorBank bank = random_bank(d, e, r, 1, rng);
  Tensor lambda({r});
  lambda[0] = 1.0;
  MaterializedCell cell = materialize_cell(bank, lambda);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(cell.gates[0].recurrent.at(i, j) == bank.gates[0].up.at(i, 0) * bank.gates[0].vp.at(j, 0));
  for (std::size_t i = 0; i < d; ++i) CHECK(cell.gates[0].bias[i] == bank.gates[0].bias_bank.at(i, 0));
}

TEST_CASE("zero coefficients give a zero cell") {
  RandomStream rng(4);
  AdaptiveFactorBank bank = random_bank(4, 3, 4, 4, rng);
  MaterializedCell cell = materialize_cell(bank, Tensor({4}));
  for (const auto& g : cell.gates) {
    for (double x : g.recurrent.data()) CHECK(x == 0.0);
    for (double x : g.input.data()) CHECK(x == 0.0);
    for (double x : g.bias.data()) CHECK(x == 0.0);
  }
}

TEST_CASE("identity right factor with unit coefficients returns the left factor") {
  RandomStream rng(6);
  AdaptiveFactorBank bank = random_bank(4, 2, 4, 1, rng);
  bank.gates[0].vp = Tensor::identity(4);
  Tensor ones({4});
  ones.fill(1.0);
  CHECK(materialize_cell(bank, ones).gates[0].recurrent == bank.gates[0].up);
  CHECK_THROWS_AS(materialize_cell(bank, Tensor({3})), ShapeError);
}

TEST_CASE("different coefficients give different matrices") {
  RandomStream rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    AdaptiveFactorBank bank = random_bank(6, 4, 6, 1, rng);
    Tensor l1({6}), l2({6});
    l1[trial % 6] = 1.0;
    l2[(trial + 1) % 6] = 1.0;
    const Tensor p1 = materialize_cell(bank, l1).gates[0].recurrent;
    const Tensor p2 = materialize_cell(bank, l2).gates[0].recurrent;
    double frob = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) frob += (p1[i] - p2[i]) * (p1[i] - p2[i]);
    CHECK(frob > 0.0);
  }
}

TEST_CASE("elman step") {
  Tape tape;
  CellWeights zero{{{tape.constant(Tensor({3, 3})), tape.constant(Tensor({3, 2})), tape.constant(Tensor({3}))}}};
  DecoderState prev{tape.constant(Tensor::vector({0.3, -0.2, 0.9})), tape.constant(Tensor({3}))};
  DecoderState next = cell_step(tape, CellKind::Elman, zero, prev, tape.constant(Tensor::vector({1, 2})));
  for (double x : tape.value(next.h).data()) CHECK(x == 0.0);

  CellWeights scalar{{{tape.constant(Tensor::matrix(1, 1, {0.5})), tape.constant(Tensor::matrix(1, 1, {1.0})),
                       tape.constant(Tensor::vector({0.0}))}}};
  DecoderState h0{tape.constant(Tensor::vector({0.0})), tape.constant(Tensor::vector({0.0}))};
  DecoderState h1 = cell_step(tape, CellKind::Elman, scalar, h0, tape.constant(Tensor::vector({0.5})));
  CHECK(tape.value(h1.h)[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-15));
  CHECK(tape.value(h1.h)[0] == doctest::Approx(0.46212).epsilon(1e-5));
}

TEST_CASE("attention over one state and with zero weights") {
  Tape tape;
  Var query = tape.constant(Tensor::vector({0.2, -0.4}));
  Var one = tape.constant(Tensor::matrix(1, 3, {1, 2, 3}));
  RandomStream rng(2);
  Var w = tape.constant(random_tensor({3, 2}, rng));
  AttentionResult a = attention_context(tape, query, one, w);
  CHECK(tape.value(a.context) == Tensor::vector({1, 2, 3}));
  CHECK(tape.value(a.weights)[0] == 1.0);

  Var mem = tape.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 9}));
  AttentionResult u = attention_context(tape, query, mem, tape.constant(Tensor({2, 2})));
  for (double x : tape.value(u.weights).data()) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(tape.value(u.context)[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(tape.value(u.context)[1] == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("copy gate extremes") {
  for (Variant v : {Variant::Seq2Seq, Variant::AdaDec}) {
    Seq2SeqModel m(small_config(v), 5);
    Tensor& gw = m.params().value(m.params().id("copy.W"));
    Tensor& gb = m.params().value(m.params().id("copy.b"));
    gw.fill(0.0);

    gb.fill(40.0);  // generation gate saturated at 1
    Tape tape;
    DecoderContext ctx = m.prepare(tape, kSource, &kExemplar);
    StepResult r = m.step(tape, ctx, m.initial_state(tape, ctx), kBos);
    ModelConfig nc = m.config();
    nc.copy = false;
    Seq2SeqModel no_copy(nc, 5);
    ParameterSet shared;
    for (std::size_t i = 0; i < no_copy.params().size(); ++i)
      shared.add(no_copy.params().name(i), m.params().value(m.params().id(no_copy.params().name(i))));
    no_copy.assign_parameters(shared);
    Tape t2;
    DecoderContext c2 = no_copy.prepare(t2, kSource, &kExemplar);
    StepResult r2 = no_copy.step(t2, c2, no_copy.initial_state(t2, c2), kBos);
    auto p = probs(tape, r.log_probs), q = probs(t2, r2.log_probs);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k] == doctest::Approx(q[k]).epsilon(1e-12));

    gb.fill(-40.0);  // all mass on source copies
    Tape t3;
    DecoderContext c3 = m.prepare(t3, kSource, &kExemplar);
    StepResult r3 = m.step(t3, c3, m.initial_state(t3, c3), kBos);
    auto pc = probs(t3, r3.log_probs);
    const Tensor& att = t3.value(*r3.source_attention);
    std::vector<double> expect(15, 0.0);
    for (std::size_t s = 0; s < 4; ++s) expect[static_cast<std::size_t>(kSource[s])] += att[s];
    for (std::size_t k = 0; k < pc.size(); ++k) CHECK(std::abs(pc[k] - expect[k]) < 1e-12);
  }
}

TEST_CASE("three-way gate at (1, 0, 0) gives the vocabulary distribution") {
  Seq2SeqModel m(small_config(Variant::AttExp), 7);
  m.params().value(m.params().id("copy.W")).fill(0.0);
  m.params().value(m.params().id("copy.b")) = Tensor::vector({60, 0, 0});
  Tape tape;
  DecoderContext ctx = m.prepare(tape, kSource, &kExemplar);
  StepResult r = m.step(tape, ctx, m.initial_state(tape, ctx), kBos);
  REQUIRE(r.exemplar_attention.has_value());

  // Reference: softmax of the same logits without copying.
  ModelConfig nc = m.config();
  nc.copy = false;
  Seq2SeqModel ref(nc, 7);
  ParameterSet shared;
  for (std::size_t i = 0; i < ref.params().size(); ++i)
    shared.add(ref.params().name(i), m.params().value(m.params().id(ref.params().name(i))));
  ref.assign_parameters(shared);
  Tape t2;
  DecoderContext c2 = ref.prepare(t2, kSource, &kExemplar);
  StepResult r2 = ref.step(t2, c2, ref.initial_state(t2, c2), kBos);
  auto p = probs(tape, r.log_probs), q = probs(t2, r2.log_probs);
  for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k] == doctest::Approx(q[k]).epsilon(1e-12));
}

TEST_CASE("output distributions sum to one") {
  RandomStream rng(10);
  for (Variant v : {Variant::Seq2Seq, Variant::AttExp, Variant::AdaDec, Variant::AdaDecAttExp}) {
    for (CellKind cell : {CellKind::Lstm, CellKind::Elman}) {
      ModelConfig c = small_config(v, cell);
      c.init_range = 0.8;
      Seq2SeqModel m(c, rng.next_u64());
      Tape tape;
      DecoderContext ctx = m.prepare(tape, kSource, &kExemplar);
      DecoderState s = m.initial_state(tape, ctx);
      TokenId prev = kBos;
      for (int t = 0; t < 6; ++t) {
        StepResult r = m.step(tape, ctx, s, prev);
        double total = 0.0;
        for (double p : probs(tape, r.log_probs)) total += p;
        CHECK(std::abs(total - 1.0) <= 1e-6);
        s = r.state;
        prev = static_cast<TokenId>(4 + t);
      }
    }
  }
}

TEST_CASE("parameter counts") {
  ModelConfig c = small_config(Variant::AdaDec, CellKind::Elman, 4, 4);
  c.embed_dim = 4;
  ParameterCounts a = count_parameters(c);
  CHECK(a.recurrent_weights == 64);
  CHECK(a.recurrent_bias == 16);

  c.variant = Variant::Seq2Seq;
  ParameterCounts s = count_parameters(c);
  CHECK(s.recurrent_weights == 32);
  CHECK(s.recurrent_bias == 4);

  c.variant = Variant::AdaDec;
  c.cell = CellKind::Lstm;
  ParameterCounts l = count_parameters(c);
  CHECK(l.recurrent_weights + l.recurrent_bias == 320);
}

TEST_CASE("parameter counts match the allocated tensors") {
  for (Variant v : {Variant::Seq2Seq, Variant::AttExp, Variant::AdaDec, Variant::AdaDecAttExp}) {
    for (CellKind cell : {CellKind::Lstm, CellKind::Elman}) {
      for (bool tie : {true, false}) {
        for (bool copy : {true, false}) {
          ModelConfig c = small_config(v, cell, 7, 3);
          c.tie_embeddings = tie;
          c.copy = copy;
          c.encoder_layers = 2;
          Seq2SeqModel m(c, 1);
          CHECK(count_parameters(c).total() == m.params().scalar_count());
        }
      }
    }
  }
}

TEST_CASE("parameter initialisation is seeded") {
  Seq2SeqModel a(small_config(Variant::AdaDec), 99), b(small_config(Variant::AdaDec), 99),
      c(small_config(Variant::AdaDec), 100);
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    all_equal = all_equal && a.params().value(i) == b.params().value(i);
    any_diff = any_diff || !(a.params().value(i) == c.params().value(i));
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("adaptive variants need an exemplar") {
  Seq2SeqModel m(small_config(Variant::AdaDec), 1);
  Tape tape;
  CHECK_THROWS(m.prepare(tape, kSource, nullptr));
  Tensor lambda({6});
  lambda.fill(1.0);
  CHECK_NOTHROW(m.prepare(tape, kSource, nullptr, {}, lambda));
}

TEST_CASE("constant coefficients reduce to a fixed decoder") {
  for (CellKind cell : {CellKind::Lstm, CellKind::Elman}) {
    ModelConfig ac = small_config(Variant::AdaDec, cell, 6, 4);
    Seq2SeqModel ada(ac, 31);
    ModelConfig fc = ac;
    fc.variant = Variant::Seq2Seq;
    Seq2SeqModel fixed(fc, 32);

    RandomStream rng(3);
    Tensor lambda = random_tensor({4}, rng);
    MaterializedCell mc = materialize_cell(ada.factor_bank(), lambda);
    ParameterSet init;
    for (std::size_t i = 0; i < fixed.params().size(); ++i) {
      const std::string& name = fixed.params().name(i);
      if (name.rfind("decoder.", 0) == 0) {
        const std::size_t g = [&] {
          for (std::size_t k = 0; k < ac.gate_count(); ++k)
            if (name.substr(8, name.find('.', 8) - 8) == gate_name(cell, k)) return k;
          return std::size_t{0};
        }();
        const char kind = name.back();
        init.add(name, kind == 'P' ? mc.gates[g].recurrent : kind == 'Q' ? mc.gates[g].input : mc.gates[g].bias);
      } else {
        init.add(name, ada.params().value(ada.params().id(name)));
      }
    }
    fixed.assign_parameters(init);

    const TokenSequence target = {7, 9, 11, kEos};
    Tape ta, tf;
    std::size_t na = 0, nf = 0;
    Var la = ada.sequence_nll(ta, ada.prepare(ta, kSource, nullptr, {}, lambda), target, {}, na);
    Var lf = fixed.sequence_nll(tf, fixed.prepare(tf, kSource, nullptr), target, {}, nf);
    CHECK(std::abs(ta.value(la).item() - tf.value(lf).item()) <= 1e-6);

    Gradients ga = ta.backprop(la, ada.params());
    Gradients gf = tf.backprop(lf, fixed.params());
    for (std::size_t i = 0; i < fixed.params().size(); ++i) {
      const std::string& name = fixed.params().name(i);
      if (name.rfind("decoder.", 0) == 0) continue;
      CHECK(max_abs_diff(gf[i], ga[ada.params().id(name)]) <= 1e-6);
    }
    // Chain rule through P = Up diag(lambda) Vpᵀ: dL/dUp = dL/dP Vp diag(lambda).
    for (std::size_t g = 0; g < ac.gate_count(); ++g) {
      const std::string gn = gate_name(cell, g);
      const Tensor& dP = gf[fixed.params().id("decoder." + gn + ".P")];
      const Tensor& vp = ada.params().value(ada.params().id("bank." + gn + ".Vp"));
      const Tensor& dUp = ga[ada.params().id("bank." + gn + ".Up")];
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
          double expect = 0.0;
          for (std::size_t j = 0; j < 6; ++j) expect += dP.at(i, j) * vp.at(j, k);
          CHECK(std::abs(dUp.at(i, k) - expect * lambda[k]) <= 1e-9);
        }
    }
  }
}
