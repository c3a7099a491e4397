#include <doctest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"
#include "ndesteer/errors.hpp"
#include "ndesteer/perturb.hpp"
#include "ndesteer/tensor_io.hpp"
#include "ndesteer/vlm.hpp"
#include "oracles.hpp"

using namespace ndesteer;

namespace {

Tensor random_image(const ToyVlmConfig& c, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<float> px(c.image_h * c.image_w);
    for (auto& p : px) p = static_cast<float>(ud(gen));
    return Tensor::matrix(c.image_h, c.image_w, px);
}

double max_abs_diff(const Tensor& logits, const Eigen::MatrixXd& ref) {
    double worst = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t j = 0; j < logits.cols(); ++j) worst = std::max(worst, std::abs(logits.at(i, j) - ref(i, j)));
    return worst;
}

// zero blocks, one-hot token embeddings and a head that maps token i to succ[i]
Model chain_model(const std::vector<TokenId>& succ) {
    ToyVlmConfig c = testing::tiny_config();
    ModelWeights w = zero_weights(c);
    for (std::size_t i = 0; i < c.vocab.size(); ++i) {
        w.tok_embed.row(i)[i] = 1.0f;
        w.head_w.row(i)[static_cast<std::size_t>(succ[i])] = 1.0f;
    }
    return Model(c, std::move(w));
}

std::vector<std::uint8_t> raw_checkpoint(const ToyVlmConfig& c, const ModelWeights& w) {
    return encode_checkpoint(c, w);
}

}  // namespace

TEST_CASE("config validation") {
    ToyVlmConfig c = testing::tiny_config();
    CHECK_NOTHROW(c.validate());
    c.d_model = 33;
    c.n_heads = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(init_seeded(c), ConfigError);
    c = testing::tiny_config();
    c.patch = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = testing::tiny_config();
    c.vocab.push_back("[BOS]");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = testing::tiny_config();
    c.vocab.erase(c.vocab.begin());
    CHECK_THROWS_AS(c.validate(), ConfigError);

    const ToyVlmConfig d = testing::tiny_config(9);
    CHECK(ToyVlmConfig::from_json(d.to_json()) == d);
}

TEST_CASE("tokenizer") {
    const Vocabulary v(testing::tiny_vocab());
    const auto ids = v.tokenize("is there a dog");
    CHECK(ids.size() == 4);
    CHECK(v.detokenize(ids) == "is there a dog");
    CHECK(v.tokenize("qwzx") == std::vector<TokenId>{v.unk()});
    CHECK(v.tokenize("").empty());
    CHECK(v.detokenize(v.tokenize("  is   there\ta  dog ")) == "is there a dog");
}

TEST_CASE("seeded init is deterministic and seed sensitive") {
    const Model a = init_seeded(testing::tiny_config(1));
    const Model b = init_seeded(testing::tiny_config(1));
    CHECK(raw_checkpoint(a.config(), a.weights()) == raw_checkpoint(b.config(), b.weights()));
    CHECK(a.digest() == b.digest());
    const Model c = init_seeded(testing::tiny_config(2));
    CHECK_FALSE(bitwise_equal(a.weights().tok_embed, c.weights().tok_embed));
    CHECK(a.digest() != c.digest());
    CHECK(a.digest().size() == 64);
}

TEST_CASE("patch encoder") {
    const Model m = init_seeded(testing::tiny_config(3));
    std::mt19937_64 gen(3);
    const auto& c = m.config();

    ToyVlmConfig big = testing::tiny_config();
    big.image_h = big.image_w = 8;
    const Model mb = init_seeded(big);
    CHECK(encode_image(mb, Tensor({8, 8})).dims() == std::vector<std::size_t>{16, big.d_model});

    ModelWeights zw = zero_weights(c);
    const Model zero(c, zw);
    const Tensor e0 = encode_image(zero, random_image(c, gen));
    for (float v : e0.values()) CHECK(v == 0.0f);

    const Tensor img = random_image(c, gen);
    const Tensor e = encode_image(m, img);
    // naive per-patch flatten and multiply
    std::size_t k = 0;
    for (std::size_t gr = 0; gr < c.image_h / c.patch; ++gr) {
        for (std::size_t gc = 0; gc < c.image_w / c.patch; ++gc, ++k) {
            for (std::size_t j = 0; j < c.d_model; ++j) {
                double acc = m.weights().patch_b.values()[j];
                for (std::size_t dr = 0; dr < c.patch; ++dr)
                    for (std::size_t dc = 0; dc < c.patch; ++dc)
                        acc += img.at(gr * c.patch + dr, gc * c.patch + dc) * m.weights().patch_w.at(dr * c.patch + dc, j);
                CHECK(std::abs(e.at(k, j) - acc) < 1e-6);
            }
        }
    }
    CHECK_THROWS_AS(encode_image(m, Tensor({3, 4})), ShapeError);
}

TEST_CASE("forward matches the dense reference") {
    std::mt19937_64 gen(41);
    for (auto mode : {AttentionMode::prefix_bidirectional, AttentionMode::fully_causal}) {
        ToyVlmConfig c = testing::tiny_config(5);
        c.attention_mode = mode;
        const Model m = init_seeded(c);
        const Tensor img = random_image(c, gen);
        const std::vector<TokenId> text{1, 5, 6, 7, 8};

        ForwardRequest req;
        req.vision = Image{img};
        req.text_ids = text;
        req.n_generated = 2;
        const auto r = forward(m, req);
        CHECK(r.logits.rows() == c.n_patches() + text.size());
        CHECK(max_abs_diff(r.logits, oracle::dense_logits(m, Image{img}, text, 2)) < 1e-5);

        ForwardRequest text_only;
        text_only.text_ids = text;
        CHECK(max_abs_diff(forward(m, text_only).logits, oracle::dense_logits(m, std::monostate{}, text)) < 1e-5);
    }
}

TEST_CASE("hand-built one-layer model against a pencil-and-paper computation") {
    // one block whose attention output is the value path of a single
    // position (identity Wv, Wo), MLP off
    ToyVlmConfig c = testing::tiny_config();
    c.n_layers = 1;
    c.n_heads = 1;
    ModelWeights w = zero_weights(c);
    for (std::size_t i = 0; i < c.d_model; ++i) {
        w.blocks[0].wv.row(i)[i] = 1.0f;
        w.blocks[0].wo.row(i)[i] = 1.0f;
    }
    const TokenId tok = 3;
    for (std::size_t j = 0; j < c.d_model; ++j) w.tok_embed.row(tok)[j] = static_cast<float>(j % 4) - 1.5f;
    for (std::size_t j = 0; j < c.d_model; ++j) w.head_w.row(j)[4] = 0.25f;
    w.head_b.data()[4] = 0.5f;
    const Model m(c, std::move(w));

    ForwardRequest req;
    req.text_ids = {tok};
    const auto r = forward(m, req);
    // x = e; LN(x) has mean 0 and unit variance: entries (x - 0) / sqrt(1.25 + 1e-5)
    // h = x + LN(x); logit_4 = 0.25 * sum(h) + 0.5 = 0.5 since both sums vanish
    CHECK(std::abs(r.logits.at(0, 4) - 0.5) < 1e-5);
    // logit of every other token is the zero bias
    CHECK(r.logits.at(0, 3) == 0.0f);
    // first hidden coordinate: -1.5 - 1.5 / sqrt(1.25 + 1e-5)
    ForwardRequest rec = req;
    rec.record = true;
    const auto t = forward(m, rec);
    CHECK(std::abs(t.trace->hidden(1, 0)[0] - (-1.5 - 1.5 / std::sqrt(1.25 + 1e-5))) < 1e-5);
}

TEST_CASE("forward is deterministic and checks lengths") {
    const Model m = init_seeded(testing::tiny_config(6));
    ForwardRequest req;
    req.vision = null_visual(m.config());
    req.text_ids = {1, 5, 6};
    CHECK(bitwise_equal(forward(m, req).logits, forward(m, req).logits));

    ForwardRequest empty;
    CHECK_THROWS_AS(forward(m, empty), ShapeError);
    ForwardRequest longer;
    longer.text_ids.assign(m.config().max_seq + 1, 5);
    CHECK_THROWS_AS(forward(m, longer), OverflowError);
    ForwardRequest bad_id;
    bad_id.text_ids = {99};
    CHECK_THROWS_AS(forward(m, bad_id), ShapeError);
}

TEST_CASE("trace layout") {
    const Model m = init_seeded(testing::tiny_config(7));
    std::mt19937_64 gen(7);
    ForwardRequest req;
    req.vision = Image{random_image(m.config(), gen)};
    req.text_ids = {1, 5};
    req.record = true;
    const auto r = forward(m, req);
    REQUIRE(r.trace);
    CHECK(r.trace->n_vision == m.config().n_patches());
    CHECK(r.trace->layers.size() == m.config().n_layers + 1);
    CHECK(r.trace->roles.front() == PositionRole::vision);
    CHECK(r.trace->roles.back() == PositionRole::text);

    req.vision = null_visual(m.config());
    CHECK(forward(m, req).trace->n_vision == m.config().n_patches());
}

TEST_CASE("fully causal states ignore later tokens") {
    ToyVlmConfig c = testing::tiny_config(8);
    c.attention_mode = AttentionMode::fully_causal;
    const Model m = init_seeded(c);
    ForwardRequest a, b;
    a.text_ids = {1, 5, 6, 7, 8};
    b.text_ids = {1, 5, 6, 9, 10};
    a.record = b.record = true;
    const auto ra = forward(m, a), rb = forward(m, b);
    for (std::size_t l = 0; l <= c.n_layers; ++l)
        for (std::size_t k = 0; k < 3; ++k) {
            const auto x = ra.trace->hidden(l, k), y = rb.trace->hidden(l, k);
            CHECK(std::equal(x.begin(), x.end(), y.begin()));
        }

    // the prefix mode lets earlier prompt positions see the later ones
    c.attention_mode = AttentionMode::prefix_bidirectional;
    const Model mp = init_seeded(c);
    const auto pa = forward(mp, a), pb = forward(mp, b);
    const auto x = pa.trace->hidden(1, 0), y = pb.trace->hidden(1, 0);
    CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin()));
}

TEST_CASE("greedy decoding") {
    const Model m = init_seeded(testing::tiny_config(9));
    const std::vector<TokenId> prompt{1, 5, 6};
    CHECK(generate_greedy(m, {}, prompt, 3).size() <= 3);
    CHECK_THROWS_AS(generate_greedy(m, {}, prompt, 0), ConfigError);

    // head always prefers EOS
    ToyVlmConfig c = testing::tiny_config();
    ModelWeights w = zero_weights(c);
    w.head_b.data()[2] = 10.0f;
    const Model eos_model(c, w);
    CHECK(generate_greedy(eos_model, {}, prompt, 5) == std::vector<TokenId>{eos_model.vocab().eos()});

    // chain: BOS -> yes -> no -> is -> EOS
    std::vector<TokenId> succ(c.vocab.size(), 0);
    succ[1] = 3;
    succ[3] = 4;
    succ[4] = 5;
    succ[5] = 2;
    const Model chain = chain_model(succ);
    const auto out = generate_greedy(chain, {}, std::vector<TokenId>{1}, 10);
    CHECK(out == std::vector<TokenId>{3, 4, 5, 2});

    // step-by-step argmax of the dense reference gives the same sequence
    std::vector<TokenId> seq{1}, expected;
    for (int step = 0; step < 10; ++step) {
        const Eigen::MatrixXd lg = oracle::dense_logits(chain, std::monostate{}, seq, expected.size());
        Eigen::Index best = 0;
        lg.row(lg.rows() - 1).maxCoeff(&best);
        expected.push_back(static_cast<TokenId>(best));
        if (best == 2) break;
        seq.push_back(static_cast<TokenId>(best));
    }
    CHECK(out == expected);

    // ties go to the lowest id
    ModelWeights tie = zero_weights(c);
    tie.head_b.data()[7] = 1.0f;
    tie.head_b.data()[4] = 1.0f;
    CHECK(generate_greedy(Model(c, tie), {}, prompt, 1) == std::vector<TokenId>{4});
}

TEST_CASE("checkpoint roundtrip") {
    testing::temp_dir dir("ckpt");
    const Model m = init_seeded(testing::tiny_config(10));
    const Model back = checkpoint_roundtrip(m, dir / "m.tvlm");
    CHECK(back.config() == m.config());
    CHECK(back.digest() == m.digest());
    ForwardRequest req;
    req.text_ids = {1, 5, 6};
    CHECK(bitwise_equal(forward(m, req).logits, forward(back, req).logits));
    CHECK(sha256_hex(raw_checkpoint(m.config(), m.weights())) == m.digest());
}

TEST_CASE("checkpoint rejects corrupt files") {
    const Model m = init_seeded(testing::tiny_config(11));
    auto bytes = raw_checkpoint(m.config(), m.weights());

    auto bumped = bytes;
    bumped[4] = 0x02;
    CHECK_THROWS_AS(decode_checkpoint(bumped), VersionError);

    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);

    ModelWeights w = m.weights();
    w.patch_b = Tensor({m.config().d_model + 1});
    CHECK_THROWS_AS(decode_checkpoint(raw_checkpoint(m.config(), w)), ShapeError);

    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);

    // known answer for the digest primitive
    const std::string abc = "abc";
    CHECK(sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(abc.data()), 3)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
