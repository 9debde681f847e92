#pragma once

// Small encoder-decoder transformer with hand-derived exact backpropagation,
// Adam + inverse-sqrt schedule, greedy/beam decoding and bit-exact
// checkpointing. Templated on the scalar type: training runs in float, the
// finite-difference gradient oracle instantiates the same code in double.
//
// Architecture: pre-layer-norm transformer, tied input/output embeddings,
// sinusoidal positions, ReLU feed-forward.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlab/rng.hpp"
#include "mtlab/sampler.hpp"
#include "mtlab/text.hpp"

namespace mtlab::model {

using Json = nlohmann::json;
using sampler::Batch;

struct ModelConfig {
    int layers_enc = 2;
    int layers_dec = 2;
    int d_model = 128;
    int heads = 4;
    int d_ff = 256;
    int vocab_size = 0;
    int max_positions = 256;
    double dropout_rate = 0.1;
    double label_smoothing = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (layers_enc <= 0 || layers_dec <= 0) throw std::invalid_argument("layer counts must be positive");
        if (d_model <= 0 || heads <= 0 || d_ff <= 0) throw std::invalid_argument("dims must be positive");
        if (d_model % heads != 0) throw std::invalid_argument("d_model must be divisible by heads");
        if (vocab_size <= 0) throw std::invalid_argument("vocab_size must be positive");
        if (max_positions <= 0) throw std::invalid_argument("max_positions must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw std::invalid_argument("dropout_rate outside [0,1)");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw std::invalid_argument("label_smoothing outside [0,1)");
    }

    Json to_json() const {
        return Json{{"layers_enc", layers_enc}, {"layers_dec", layers_dec}, {"d_model", d_model},
                    {"heads", heads},           {"d_ff", d_ff},             {"vocab_size", vocab_size},
                    {"max_positions", max_positions}, {"dropout_rate", dropout_rate},
                    {"label_smoothing", label_smoothing}, {"seed", seed}};
    }
    static ModelConfig from_json(const Json& j) {
        ModelConfig c;
        c.layers_enc = j.at("layers_enc").get<int>();
        c.layers_dec = j.at("layers_dec").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.heads = j.at("heads").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.max_positions = j.at("max_positions").get<int>();
        c.dropout_rate = j.at("dropout_rate").get<double>();
        c.label_smoothing = j.at("label_smoothing").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.validate();
        return c;
    }
};

struct OptimizerConfig {
    double peak_lr = 3e-3;
    int warmup_steps = 400;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;

    // Linear warmup to peak, inverse-sqrt decay after.
    double lr_at(std::int64_t step) const {
        if (step <= 0) return 0.0;
        const double s = static_cast<double>(step);
        const double w = static_cast<double>(warmup_steps);
        return peak_lr * std::min(s / w, std::sqrt(w / s));
    }

    Json to_json() const {
        return Json{{"peak_lr", peak_lr}, {"warmup_steps", warmup_steps}, {"clip_norm", clip_norm},
                    {"beta1", beta1},     {"beta2", beta2},               {"eps", eps}};
    }
    static OptimizerConfig from_json(const Json& j) {
        OptimizerConfig c;
        c.peak_lr = j.at("peak_lr").get<double>();
        c.warmup_steps = j.at("warmup_steps").get<int>();
        c.clip_norm = j.at("clip_norm").get<double>();
        c.beta1 = j.at("beta1").get<double>();
        c.beta2 = j.at("beta2").get<double>();
        c.eps = j.at("eps").get<double>();
        return c;
    }
};

enum class Mode { train, eval };

struct DecodeOptions {
    int beam = 1;  // 1 = greedy
    int max_len = 64;
    double alpha = 0.6;  // beam length-normalization exponent
};

struct DecodeResult {
    std::vector<int> ids;  // generated tokens, no leading BOS, no trailing EOS
    bool terminated = true;
    double score = 0.0;
};

template <typename S>
class Transformer {
  public:
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

    struct Tensor {
        std::string name;
        Mat value;
        Mat grad;
        Mat m, v;  // Adam moments
    };

    explicit Transformer(const ModelConfig& cfg, OptimizerConfig opt = {}) : cfg_(cfg), opt_cfg_(opt) {
        cfg_.validate();
        build_layout();
        init_params();
        build_positions();
    }

    const ModelConfig& config() const { return cfg_; }
    const OptimizerConfig& optimizer_config() const { return opt_cfg_; }
    OptimizerConfig& optimizer_config() { return opt_cfg_; }
    std::int64_t step() const { return step_; }
    std::vector<Tensor>& tensors() { return tensors_; }
    const std::vector<Tensor>& tensors() const { return tensors_; }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& t : tensors_) n += t.value.size();
        return n;
    }

    std::uint64_t params_hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& t : tensors_) {
            h = fnv1a(t.name, h);
            h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.value.data()),
                                       static_cast<std::size_t>(t.value.size()) * sizeof(S)),
                      h);
        }
        return h;
    }

    // ------------------------------------------------------------------
    // Forward / loss
    // ------------------------------------------------------------------

    struct LossStats {
        double loss = 0.0;
        std::int64_t tokens = 0;
        double attn_row_sum_min = 1.0;
        double attn_row_sum_max = 1.0;
    };

    LossStats forward_loss(const Batch& batch, Mode mode, Rng* rng = nullptr) {
        Workspace ws;
        return forward_internal(batch, mode, rng, ws, /*want_stats=*/true);
    }

    // One optimizer step. Throws on non-finite loss without touching params.
    double train_step(const Batch& batch, Rng& rng) {
        for (auto& t : tensors_) t.grad.setZero();
        Workspace ws;
        const auto stats = forward_internal(batch, Mode::train, &rng, ws, false);
        if (!std::isfinite(stats.loss))
            throw std::runtime_error("train_step: non-finite loss (" + std::to_string(stats.loss) +
                                     ") at step " + std::to_string(step_ + 1) + "; step aborted");
        backward_internal(batch, ws);
        clip_gradients();
        apply_adam();
        ++step_;
        return stats.loss;
    }

    // ------------------------------------------------------------------
    // Decoding
    // ------------------------------------------------------------------

    // src_ids must already carry the <2tgt> tag and EOS. `banned` contains
    // token ids the decoder must never emit (PAD, MASK, UNK, language tags).
    DecodeResult decode(const std::vector<int>& src_ids, const DecodeOptions& opt_in = {},
                        const std::vector<int>& banned = {}) {
        Mat enc = encode_sequence(src_ids);
        const int eos = vocab::Vocabulary::kEos;
        // The decoder input carries a leading EOS, so generation can use at
        // most max_positions - 1 steps of the positional table.
        DecodeOptions opt = opt_in;
        opt.max_len = std::min(opt.max_len, cfg_.max_positions - 1);

        struct Hyp {
            std::vector<int> ids;  // decoder input so far, starts with EOS
            double logp = 0.0;
        };
        auto norm = [&](double logp, int len) {
            const double lp = std::pow(5.0 + len, opt.alpha) / std::pow(6.0, opt.alpha);
            return logp / lp;
        };

        std::vector<Hyp> beam{{std::vector<int>{eos}, 0.0}};
        std::vector<DecodeResult> finished;
        std::vector<char> is_banned(static_cast<std::size_t>(cfg_.vocab_size), 0);
        for (int b : banned) is_banned[static_cast<std::size_t>(b)] = 1;

        for (int t = 0; t < opt.max_len && !beam.empty(); ++t) {
            struct Cand {
                std::size_t hyp;
                int token;
                double logp;
            };
            std::vector<Cand> cands;
            for (std::size_t h = 0; h < beam.size(); ++h) {
                Vec logp = decoder_logprobs_last(enc, static_cast<int>(src_ids.size()), beam[h].ids);
                for (int v = 0; v < cfg_.vocab_size; ++v) {
                    if (is_banned[static_cast<std::size_t>(v)]) continue;
                    cands.push_back({h, v, beam[h].logp + static_cast<double>(logp[v])});
                }
            }
            const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(opt.beam), cands.size());
            std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                              [](const Cand& a, const Cand& b) {
                                  if (a.logp != b.logp) return a.logp > b.logp;
                                  if (a.hyp != b.hyp) return a.hyp < b.hyp;
                                  return a.token < b.token;
                              });
            std::vector<Hyp> next;
            for (std::size_t i = 0; i < keep; ++i) {
                const auto& c = cands[i];
                if (c.token == eos) {
                    DecodeResult r;
                    r.ids.assign(beam[c.hyp].ids.begin() + 1, beam[c.hyp].ids.end());
                    r.terminated = true;
                    r.score = norm(c.logp, static_cast<int>(r.ids.size()) + 1);
                    finished.push_back(std::move(r));
                } else {
                    Hyp h = beam[c.hyp];
                    h.ids.push_back(c.token);
                    h.logp = c.logp;
                    next.push_back(std::move(h));
                }
            }
            beam = std::move(next);
            if (static_cast<int>(finished.size()) >= opt.beam) break;
        }
        if (!finished.empty()) {
            auto best = std::max_element(finished.begin(), finished.end(),
                                         [](const DecodeResult& a, const DecodeResult& b) { return a.score < b.score; });
            return *best;
        }
        // Length budget exhausted: return the best unfinished hypothesis.
        DecodeResult r;
        r.terminated = false;
        if (!beam.empty()) {
            auto best = std::max_element(beam.begin(), beam.end(), [&](const Hyp& a, const Hyp& b) {
                return norm(a.logp, static_cast<int>(a.ids.size())) < norm(b.logp, static_cast<int>(b.ids.size()));
            });
            r.ids.assign(best->ids.begin() + 1, best->ids.end());
            r.score = norm(best->logp, static_cast<int>(best->ids.size()));
        }
        return r;
    }

    // ------------------------------------------------------------------
    // Gradient oracle
    // ------------------------------------------------------------------

    // Central finite differences against analytic gradients, dropout off.
    // Returns the maximum relative error over every parameter element.
    double grad_check(const Batch& batch, double h = 1e-3) {
        for (auto& t : tensors_) t.grad.setZero();
        Workspace ws;
        forward_internal(batch, Mode::eval, nullptr, ws, false);
        backward_internal(batch, ws);

        double max_rel = 0.0;
        for (auto& t : tensors_) {
            for (Eigen::Index i = 0; i < t.value.size(); ++i) {
                const S orig = t.value.data()[i];
                t.value.data()[i] = orig + static_cast<S>(h);
                Workspace w1;
                const double lp = forward_internal(batch, Mode::eval, nullptr, w1, false).loss;
                t.value.data()[i] = orig - static_cast<S>(h);
                Workspace w2;
                const double lm = forward_internal(batch, Mode::eval, nullptr, w2, false).loss;
                t.value.data()[i] = orig;
                const double gn = (lp - lm) / (2.0 * h);
                const double ga = static_cast<double>(t.grad.data()[i]);
                const double denom = std::max(1e-6, std::abs(ga) + std::abs(gn));
                max_rel = std::max(max_rel, std::abs(ga - gn) / denom);
            }
        }
        return max_rel;
    }

    // ------------------------------------------------------------------
    // Checkpointing
    // ------------------------------------------------------------------

    void save_checkpoint(const std::string& dir, std::uint64_t vocab_hash, const Rng& train_rng) const {
        namespace fs = std::filesystem;
        fs::create_directories(fs::path(dir) / "tensors");
        Json manifest;
        manifest["format_version"] = 1;
        manifest["config"] = cfg_.to_json();
        manifest["optimizer"] = opt_cfg_.to_json();
        manifest["step"] = step_;
        manifest["vocab_hash"] = vocab_hash;
        const auto st = train_rng.state();
        manifest["rng_state"] = Json::array({st[0], st[1], st[2], st[3]});
        Json index = Json::array();
        for (const auto& t : tensors_) {
            const std::string file = tensor_filename(t.name);
            index.push_back({{"name", t.name},
                             {"rows", t.value.rows()},
                             {"cols", t.value.cols()},
                             {"file", "tensors/" + file}});
            write_tensor((fs::path(dir) / "tensors" / file).string(), t.value);
            write_tensor((fs::path(dir) / "tensors" / ("m_" + file)).string(), t.m);
            write_tensor((fs::path(dir) / "tensors" / ("v_" + file)).string(), t.v);
        }
        manifest["tensors"] = std::move(index);
        write_file((fs::path(dir) / "checkpoint.json").string(), manifest.dump(2) + "\n");
    }

    static Transformer load_checkpoint(const std::string& dir, std::uint64_t expected_vocab_hash, Rng* train_rng) {
        namespace fs = std::filesystem;
        const Json manifest = Json::parse(read_file((fs::path(dir) / "checkpoint.json").string()));
        if (manifest.at("format_version").get<int>() != 1)
            throw std::runtime_error("checkpoint: unsupported format version");
        if (manifest.at("vocab_hash").get<std::uint64_t>() != expected_vocab_hash)
            throw std::runtime_error("checkpoint: vocabulary hash mismatch");
        Transformer model(ModelConfig::from_json(manifest.at("config")),
                          OptimizerConfig::from_json(manifest.at("optimizer")));
        model.step_ = manifest.at("step").get<std::int64_t>();
        std::map<std::string, const Json*> index;
        for (const auto& e : manifest.at("tensors")) index[e.at("name").get<std::string>()] = &e;
        for (auto& t : model.tensors_) {
            auto it = index.find(t.name);
            if (it == index.end()) throw std::runtime_error("checkpoint: missing tensor " + t.name);
            const Json& e = *it->second;
            if (e.at("rows").get<Eigen::Index>() != t.value.rows() ||
                e.at("cols").get<Eigen::Index>() != t.value.cols())
                throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
            const std::string file = tensor_filename(t.name);
            read_tensor((fs::path(dir) / "tensors" / file).string(), t.value);
            read_tensor((fs::path(dir) / "tensors" / ("m_" + file)).string(), t.m);
            read_tensor((fs::path(dir) / "tensors" / ("v_" + file)).string(), t.v);
        }
        if (train_rng) {
            const auto& st = manifest.at("rng_state");
            train_rng->set_state({st.at(0).get<std::uint64_t>(), st.at(1).get<std::uint64_t>(),
                                  st.at(2).get<std::uint64_t>(), st.at(3).get<std::uint64_t>()});
        }
        return model;
    }

    // Encoder-only pass for decoding (eval mode). Returns [L, d].
    Mat encode_sequence(const std::vector<int>& ids) {
        Batch b;
        b.encoder_ids.push_back(ids);
        b.enc_lengths.push_back(static_cast<int>(ids.size()));
        EncCache cache;
        return encoder_forward(b, Mode::eval, nullptr, cache);
    }

  private:
    // ------------------------------------------------------------------
    // Parameter layout
    // ------------------------------------------------------------------

    struct LNIdx {
        int g = -1, b = -1;
    };
    struct AttnIdx {
        int wq, bq, wk, bk, wv, bv, wo, bo;
    };
    struct FFNIdx {
        int w1, b1, w2, b2;
    };
    struct EncLayerIdx {
        LNIdx ln1;
        AttnIdx attn;
        LNIdx ln2;
        FFNIdx ffn;
    };
    struct DecLayerIdx {
        LNIdx ln1;
        AttnIdx self_attn;
        LNIdx ln2;
        AttnIdx cross_attn;
        LNIdx ln3;
        FFNIdx ffn;
    };

    int add_tensor(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        Tensor t;
        t.name = name;
        t.value = Mat::Zero(rows, cols);
        t.grad = Mat::Zero(rows, cols);
        t.m = Mat::Zero(rows, cols);
        t.v = Mat::Zero(rows, cols);
        tensors_.push_back(std::move(t));
        return static_cast<int>(tensors_.size()) - 1;
    }

    LNIdx add_ln(const std::string& prefix) {
        return {add_tensor(prefix + ".g", 1, cfg_.d_model), add_tensor(prefix + ".b", 1, cfg_.d_model)};
    }
    AttnIdx add_attn(const std::string& prefix) {
        const int d = cfg_.d_model;
        return {add_tensor(prefix + ".wq", d, d), add_tensor(prefix + ".bq", 1, d),
                add_tensor(prefix + ".wk", d, d), add_tensor(prefix + ".bk", 1, d),
                add_tensor(prefix + ".wv", d, d), add_tensor(prefix + ".bv", 1, d),
                add_tensor(prefix + ".wo", d, d), add_tensor(prefix + ".bo", 1, d)};
    }
    FFNIdx add_ffn(const std::string& prefix) {
        const int d = cfg_.d_model, f = cfg_.d_ff;
        return {add_tensor(prefix + ".w1", d, f), add_tensor(prefix + ".b1", 1, f),
                add_tensor(prefix + ".w2", f, d), add_tensor(prefix + ".b2", 1, d)};
    }

    void build_layout() {
        embed_ = add_tensor("embed", cfg_.vocab_size, cfg_.d_model);
        for (int l = 0; l < cfg_.layers_enc; ++l) {
            const std::string p = "enc." + std::to_string(l);
            enc_layers_.push_back({add_ln(p + ".ln1"), add_attn(p + ".attn"), add_ln(p + ".ln2"), add_ffn(p + ".ffn")});
        }
        enc_lnf_ = add_ln("enc.lnf");
        for (int l = 0; l < cfg_.layers_dec; ++l) {
            const std::string p = "dec." + std::to_string(l);
            dec_layers_.push_back({add_ln(p + ".ln1"), add_attn(p + ".self"), add_ln(p + ".ln2"),
                                   add_attn(p + ".cross"), add_ln(p + ".ln3"), add_ffn(p + ".ffn")});
        }
        dec_lnf_ = add_ln("dec.lnf");
    }

    void init_params() {
        Rng rng(cfg_.seed);
        for (auto& t : tensors_) {
            const bool is_gain = t.name.size() > 2 && t.name.compare(t.name.size() - 2, 2, ".g") == 0 &&
                                 t.name.find(".ln") != std::string::npos;
            const bool is_bias = t.value.rows() == 1 && !is_gain;
            if (is_gain) {
                t.value.setOnes();
            } else if (is_bias) {
                t.value.setZero();
            } else {
                // Glorot-style scaled uniform.
                const double limit = std::sqrt(6.0 / static_cast<double>(t.value.rows() + t.value.cols()));
                for (Eigen::Index i = 0; i < t.value.size(); ++i)
                    t.value.data()[i] = static_cast<S>((rng.uniform_real() * 2.0 - 1.0) * limit);
            }
        }
    }

    void build_positions() {
        positions_ = Mat::Zero(cfg_.max_positions, cfg_.d_model);
        for (int p = 0; p < cfg_.max_positions; ++p) {
            for (int i = 0; i < cfg_.d_model / 2; ++i) {
                const double freq = std::pow(10000.0, -2.0 * i / cfg_.d_model);
                positions_(p, 2 * i) = static_cast<S>(std::sin(p * freq));
                positions_(p, 2 * i + 1) = static_cast<S>(std::cos(p * freq));
            }
        }
    }

    static std::string tensor_filename(std::string name) {
        for (auto& c : name)
            if (c == '.' || c == '/') c = '_';
        return name + ".bin";
    }

    // Tensors are stored as little-endian float32, row-major.
    static void write_tensor(const std::string& path, const Mat& m) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write tensor file: " + path);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const float f = static_cast<float>(m.data()[i]);
            out.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
    }
    static void read_tensor(const std::string& path, Mat& m) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read tensor file: " + path);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            float f = 0;
            in.read(reinterpret_cast<char*>(&f), sizeof f);
            if (!in) throw std::runtime_error("tensor file truncated: " + path);
            m.data()[i] = static_cast<S>(f);
        }
    }

    // ------------------------------------------------------------------
    // Forward caches
    // ------------------------------------------------------------------

    struct LNCache {
        Mat xhat;  // normalized input
        Vec rstd;  // 1/std per row
    };
    struct AttnCache {
        Mat input;            // post-LN input to Q (and K/V for self-attention)
        Mat q, k, v;          // [N, d]
        Mat concat;           // heads concatenated, pre-output-projection
        std::vector<Mat> probs;  // per (seq, head) attention rows [Lq, Lk]
    };
    struct FFNCache {
        Mat input;   // post-LN
        Mat hidden;  // post-ReLU
    };
    struct DropCache {
        Mat mask;  // empty when inactive
    };
    struct EncLayerCache {
        Mat x_in;  // residual stream entering the layer
        LNCache ln1;
        AttnCache attn;
        DropCache drop1;
        Mat x_mid;
        LNCache ln2;
        FFNCache ffn;
        DropCache drop2;
    };
    struct DecLayerCache {
        Mat x_in;
        LNCache ln1;
        AttnCache self_attn;
        DropCache drop1;
        Mat x_mid1;
        LNCache ln2;
        AttnCache cross_attn;
        DropCache drop2;
        Mat x_mid2;
        LNCache ln3;
        FFNCache ffn;
        DropCache drop3;
    };
    struct EncCache {
        Mat x0;
        DropCache drop_embed;
        std::vector<EncLayerCache> layers;
        Mat pre_lnf;
        LNCache lnf;
        Mat out;  // final encoder states [B*Ls, d]
        int seq_len = 0;
    };
    struct DecCache {
        Mat x0;
        DropCache drop_embed;
        std::vector<DecLayerCache> layers;
        Mat pre_lnf;
        LNCache lnf;
        Mat out;
        int seq_len = 0;
    };
    struct Workspace {
        EncCache enc;
        DecCache dec;
        Mat dlogits;  // gradient wrt logits, scaled by 1/token count
        double attn_min = 1.0, attn_max = 1.0;
    };

    // ------------------------------------------------------------------
    // Primitive ops
    // ------------------------------------------------------------------

    Mat& val(int idx) { return tensors_[static_cast<std::size_t>(idx)].value; }
    Mat& grd(int idx) { return tensors_[static_cast<std::size_t>(idx)].grad; }

    Mat layernorm_forward(const Mat& x, const LNIdx& ln, LNCache& cache) {
        const auto n = x.rows();
        const auto d = x.cols();
        cache.xhat.resize(n, d);
        cache.rstd.resize(n);
        Mat out(n, d);
        const auto& g = val(ln.g);
        const auto& b = val(ln.b);
        for (Eigen::Index r = 0; r < n; ++r) {
            const S mean = x.row(r).mean();
            const S var = (x.row(r).array() - mean).square().mean();
            const S rstd = S(1) / std::sqrt(var + S(1e-5));
            cache.rstd[r] = rstd;
            cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
            out.row(r) = cache.xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
        }
        return out;
    }

    Mat layernorm_backward(const Mat& dout, const LNIdx& ln, const LNCache& cache) {
        const auto n = dout.rows();
        const auto d = dout.cols();
        const auto& g = val(ln.g);
        Mat dx(n, d);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto dy = dout.row(r).cwiseProduct(g.row(0));
            const S m1 = dy.mean();
            const S m2 = dy.cwiseProduct(cache.xhat.row(r)).mean();
            dx.row(r) = (dy.array() - m1 - cache.xhat.row(r).array() * m2) * cache.rstd[r];
            grd(ln.g).row(0) += dout.row(r).cwiseProduct(cache.xhat.row(r));
            grd(ln.b).row(0) += dout.row(r);
        }
        return dx;
    }

    void maybe_dropout(Mat& x, Mode mode, Rng* rng, DropCache& cache) {
        if (mode != Mode::train || cfg_.dropout_rate <= 0.0) return;
        if (!rng) throw std::invalid_argument("train-mode forward requires an rng");
        const S keep = static_cast<S>(1.0 - cfg_.dropout_rate);
        cache.mask.resize(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            cache.mask.data()[i] = rng->bernoulli(cfg_.dropout_rate) ? S(0) : S(1) / keep;
        x = x.cwiseProduct(cache.mask);
    }

    static void dropout_backward(Mat& dx, const DropCache& cache) {
        if (cache.mask.size() > 0) dx = dx.cwiseProduct(cache.mask);
    }

    // Multi-head attention over padded [B*Lq, d] queries and [B*Lk, d] keys.
    Mat attention_forward(const Mat& q_in, const Mat& kv_in, const AttnIdx& idx, int batch, int q_len, int k_len,
                          const std::vector<int>& q_lens, const std::vector<int>& k_lens, bool causal,
                          AttnCache& cache, Workspace* stats) {
        const int d = cfg_.d_model;
        const int heads = cfg_.heads;
        const int dh = d / heads;
        const S scale = S(1) / std::sqrt(static_cast<S>(dh));

        cache.q = (q_in * val(idx.wq)).rowwise() + val(idx.bq).row(0);
        cache.k = (kv_in * val(idx.wk)).rowwise() + val(idx.bk).row(0);
        cache.v = (kv_in * val(idx.wv)).rowwise() + val(idx.bv).row(0);
        cache.concat.resize(q_in.rows(), d);
        cache.probs.assign(static_cast<std::size_t>(batch) * heads, Mat());

        for (int b = 0; b < batch; ++b) {
            const int qn = q_lens[static_cast<std::size_t>(b)];
            const int kn = k_lens[static_cast<std::size_t>(b)];
            for (int h = 0; h < heads; ++h) {
                auto Qb = cache.q.block(b * q_len, h * dh, q_len, dh);
                auto Kb = cache.k.block(b * k_len, h * dh, k_len, dh);
                auto Vb = cache.v.block(b * k_len, h * dh, k_len, dh);
                Mat s = (Qb * Kb.transpose()) * scale;
                for (int i = 0; i < q_len; ++i)
                    for (int j = 0; j < k_len; ++j)
                        if (j >= kn || (causal && j > i)) s(i, j) = S(-1e9);
                // Row softmax.
                Mat& p = cache.probs[static_cast<std::size_t>(b) * heads + h];
                p.resize(q_len, k_len);
                for (int i = 0; i < q_len; ++i) {
                    const S mx = s.row(i).maxCoeff();
                    p.row(i) = (s.row(i).array() - mx).exp();
                    const S total = p.row(i).sum();
                    p.row(i) /= total;
                    if (stats && i < qn) {
                        stats->attn_min = std::min(stats->attn_min, static_cast<double>(p.row(i).sum()));
                        stats->attn_max = std::max(stats->attn_max, static_cast<double>(p.row(i).sum()));
                    }
                }
                cache.concat.block(b * q_len, h * dh, q_len, dh) = p * Vb;
            }
        }
        return (cache.concat * val(idx.wo)).rowwise() + val(idx.bo).row(0);
    }

    // Returns (d_q_in, d_kv_in).
    std::pair<Mat, Mat> attention_backward(const Mat& dout, const Mat& q_in, const Mat& kv_in, const AttnIdx& idx,
                                           int batch, int q_len, int k_len, const std::vector<int>& k_lens,
                                           bool causal, const AttnCache& cache) {
        const int d = cfg_.d_model;
        const int heads = cfg_.heads;
        const int dh = d / heads;
        const S scale = S(1) / std::sqrt(static_cast<S>(dh));

        grd(idx.wo) += cache.concat.transpose() * dout;
        grd(idx.bo).row(0) += dout.colwise().sum();
        Mat dconcat = dout * val(idx.wo).transpose();

        Mat dq = Mat::Zero(cache.q.rows(), d);
        Mat dk = Mat::Zero(cache.k.rows(), d);
        Mat dv = Mat::Zero(cache.v.rows(), d);

        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < heads; ++h) {
                const Mat& p = cache.probs[static_cast<std::size_t>(b) * heads + h];
                auto dOb = dconcat.block(b * q_len, h * dh, q_len, dh);
                auto Qb = cache.q.block(b * q_len, h * dh, q_len, dh);
                auto Kb = cache.k.block(b * k_len, h * dh, k_len, dh);
                auto Vb = cache.v.block(b * k_len, h * dh, k_len, dh);

                dv.block(b * k_len, h * dh, k_len, dh) += p.transpose() * dOb;
                Mat dp = dOb * Vb.transpose();                       // [Lq, Lk]
                Vec rowdot = (dp.cwiseProduct(p)).rowwise().sum();   // [Lq]
                Mat ds = p.cwiseProduct(dp.colwise() - rowdot);      // softmax backward
                dq.block(b * q_len, h * dh, q_len, dh) += ds * Kb * scale;
                dk.block(b * k_len, h * dh, k_len, dh) += ds.transpose() * Qb * scale;
            }
        }
        (void)k_lens;
        (void)causal;  // masked positions already have p == 0 exactly

        grd(idx.wq) += q_in.transpose() * dq;
        grd(idx.bq).row(0) += dq.colwise().sum();
        grd(idx.wk) += kv_in.transpose() * dk;
        grd(idx.bk).row(0) += dk.colwise().sum();
        grd(idx.wv) += kv_in.transpose() * dv;
        grd(idx.bv).row(0) += dv.colwise().sum();

        Mat dq_in = dq * val(idx.wq).transpose();
        Mat dkv_in = dk * val(idx.wk).transpose() + dv * val(idx.wv).transpose();
        return {std::move(dq_in), std::move(dkv_in)};
    }

    Mat ffn_forward(const Mat& x, const FFNIdx& idx, FFNCache& cache) {
        cache.hidden = ((x * val(idx.w1)).rowwise() + val(idx.b1).row(0)).cwiseMax(S(0));
        return (cache.hidden * val(idx.w2)).rowwise() + val(idx.b2).row(0);
    }

    Mat ffn_backward(const Mat& dout, const FFNIdx& idx, const FFNCache& cache) {
        grd(idx.w2) += cache.hidden.transpose() * dout;
        grd(idx.b2).row(0) += dout.colwise().sum();
        Mat dhidden = dout * val(idx.w2).transpose();
        dhidden = dhidden.cwiseProduct((cache.hidden.array() > S(0)).template cast<S>().matrix());
        grd(idx.w1) += cache.input.transpose() * dhidden;
        grd(idx.b1).row(0) += dhidden.colwise().sum();
        return dhidden * val(idx.w1).transpose();
    }

    // Embedding + positions for a padded id matrix.
    Mat embed_forward(const std::vector<std::vector<int>>& ids, const std::vector<std::vector<int>>* positions) {
        const int batch = static_cast<int>(ids.size());
        const int len = batch > 0 ? static_cast<int>(ids[0].size()) : 0;
        const S scale = std::sqrt(static_cast<S>(cfg_.d_model));
        Mat x(static_cast<Eigen::Index>(batch) * len, cfg_.d_model);
        const auto& e = val(embed_);
        for (int b = 0; b < batch; ++b) {
            for (int t = 0; t < len; ++t) {
                const int id = ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
                if (id < 0 || id >= cfg_.vocab_size)
                    throw std::out_of_range("token id out of range: " + std::to_string(id));
                const int pos = positions ? (*positions)[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] : t;
                if (pos < 0 || pos >= cfg_.max_positions)
                    throw std::out_of_range("position out of range: " + std::to_string(pos));
                x.row(static_cast<Eigen::Index>(b) * len + t) = e.row(id) * scale + positions_.row(pos);
            }
        }
        return x;
    }

    void embed_backward(const std::vector<std::vector<int>>& ids, const Mat& dx) {
        const int batch = static_cast<int>(ids.size());
        const int len = batch > 0 ? static_cast<int>(ids[0].size()) : 0;
        const S scale = std::sqrt(static_cast<S>(cfg_.d_model));
        auto& de = grd(embed_);
        for (int b = 0; b < batch; ++b)
            for (int t = 0; t < len; ++t)
                de.row(ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]) +=
                    dx.row(static_cast<Eigen::Index>(b) * len + t) * scale;
    }

    // ------------------------------------------------------------------
    // Encoder / decoder stacks
    // ------------------------------------------------------------------

    Mat encoder_forward(const Batch& batch, Mode mode, Rng* rng, EncCache& cache, Workspace* stats = nullptr) {
        const int bsz = static_cast<int>(batch.encoder_ids.size());
        const int len = bsz > 0 ? static_cast<int>(batch.encoder_ids[0].size()) : 0;
        cache.seq_len = len;
        cache.x0 = embed_forward(batch.encoder_ids, nullptr);
        maybe_dropout(cache.x0, mode, rng, cache.drop_embed);
        Mat x = cache.x0;
        cache.layers.resize(enc_layers_.size());
        for (std::size_t l = 0; l < enc_layers_.size(); ++l) {
            auto& lc = cache.layers[l];
            const auto& li = enc_layers_[l];
            lc.x_in = x;
            Mat a = layernorm_forward(x, li.ln1, lc.ln1);
            lc.attn.input = a;
            Mat o = attention_forward(a, a, li.attn, bsz, len, len, batch.enc_lengths, batch.enc_lengths,
                                      /*causal=*/false, lc.attn, stats);
            maybe_dropout(o, mode, rng, lc.drop1);
            lc.x_mid = x + o;
            lc.ffn.input = layernorm_forward(lc.x_mid, li.ln2, lc.ln2);
            Mat f = ffn_forward(lc.ffn.input, li.ffn, lc.ffn);
            maybe_dropout(f, mode, rng, lc.drop2);
            x = lc.x_mid + f;
        }
        cache.pre_lnf = x;
        cache.out = layernorm_forward(x, enc_lnf_, cache.lnf);
        return cache.out;
    }

    // ------------------------------------------------------------------
    // Loss
    // ------------------------------------------------------------------

    LossStats forward_internal(const Batch& batch, Mode mode, Rng* rng, Workspace& ws, bool want_stats) {
        if (batch.encoder_ids.empty()) throw std::invalid_argument("forward_loss: empty batch");
        encoder_forward(batch, mode, rng, ws.enc, want_stats ? &ws : nullptr);
        decoder_forward(batch, mode, rng, ws, want_stats);
        return compute_loss(batch, ws);
    }

    void decoder_forward(const Batch& batch, Mode mode, Rng* rng, Workspace& ws, bool want_stats) {
        const int bsz = static_cast<int>(batch.decoder_input_ids.size());
        const int len = bsz > 0 ? static_cast<int>(batch.decoder_input_ids[0].size()) : 0;
        const int enc_len = ws.enc.seq_len;
        auto& cache = ws.dec;
        cache.seq_len = len;
        cache.x0 = embed_forward(batch.decoder_input_ids, &batch.decoder_positions);
        maybe_dropout(cache.x0, mode, rng, cache.drop_embed);
        Mat x = cache.x0;
        cache.layers.resize(dec_layers_.size());
        Workspace* stats = want_stats ? &ws : nullptr;
        for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
            auto& lc = cache.layers[l];
            const auto& li = dec_layers_[l];
            lc.x_in = x;
            Mat a = layernorm_forward(x, li.ln1, lc.ln1);
            lc.self_attn.input = a;
            Mat o = attention_forward(a, a, li.self_attn, bsz, len, len, batch.dec_lengths, batch.dec_lengths,
                                      /*causal=*/true, lc.self_attn, stats);
            maybe_dropout(o, mode, rng, lc.drop1);
            lc.x_mid1 = x + o;
            Mat a2 = layernorm_forward(lc.x_mid1, li.ln2, lc.ln2);
            lc.cross_attn.input = a2;
            Mat c = attention_forward(a2, ws.enc.out, li.cross_attn, bsz, len, enc_len, batch.dec_lengths,
                                      batch.enc_lengths, /*causal=*/false, lc.cross_attn, stats);
            maybe_dropout(c, mode, rng, lc.drop2);
            lc.x_mid2 = lc.x_mid1 + c;
            lc.ffn.input = layernorm_forward(lc.x_mid2, li.ln3, lc.ln3);
            Mat f = ffn_forward(lc.ffn.input, li.ffn, lc.ffn);
            maybe_dropout(f, mode, rng, lc.drop3);
            x = lc.x_mid2 + f;
        }
        cache.pre_lnf = x;
        cache.out = layernorm_forward(x, dec_lnf_, cache.lnf);
    }

    LossStats compute_loss(const Batch& batch, Workspace& ws) {
        const int bsz = static_cast<int>(batch.decoder_target_ids.size());
        const int len = ws.dec.seq_len;
        const int v = cfg_.vocab_size;
        const double eps = cfg_.label_smoothing;

        Mat logits = ws.dec.out * val(embed_).transpose();  // [B*Lt, V]
        ws.dlogits = Mat::Zero(logits.rows(), logits.cols());

        double total_loss = 0.0;  // 64-bit accumulation
        std::int64_t count = 0;
        for (int b = 0; b < bsz; ++b)
            for (int t = 0; t < len; ++t)
                if (batch.loss_mask[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]) ++count;
        if (count == 0) throw std::invalid_argument("forward_loss: empty loss mask");

        const S inv_count = S(1) / static_cast<S>(count);
        for (int b = 0; b < bsz; ++b) {
            for (int t = 0; t < len; ++t) {
                if (!batch.loss_mask[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]) continue;
                const Eigen::Index r = static_cast<Eigen::Index>(b) * len + t;
                const int y = batch.decoder_target_ids[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
                const S mx = logits.row(r).maxCoeff();
                double z = 0.0;
                for (int j = 0; j < v; ++j) z += std::exp(static_cast<double>(logits(r, j) - mx));
                const double logz = std::log(z) + static_cast<double>(mx);
                double sum_logp = 0.0;
                for (int j = 0; j < v; ++j) {
                    const double logp = static_cast<double>(logits(r, j)) - logz;
                    const double p = std::exp(logp);
                    const double q = (j == y ? 1.0 - eps : 0.0) + eps / v;
                    ws.dlogits(r, j) = static_cast<S>(p - q) * inv_count;
                    sum_logp += q * logp;
                }
                total_loss -= sum_logp;
            }
        }
        LossStats out;
        out.loss = total_loss / static_cast<double>(count);
        out.tokens = count;
        out.attn_row_sum_min = ws.attn_min;
        out.attn_row_sum_max = ws.attn_max;
        return out;
    }

    void backward_internal(const Batch& batch, Workspace& ws) {
        const int bsz = static_cast<int>(batch.decoder_input_ids.size());
        const int dec_len = ws.dec.seq_len;
        const int enc_len = ws.enc.seq_len;

        // Tied softmax projection.
        Mat ddec_out = ws.dlogits * val(embed_);
        grd(embed_) += ws.dlogits.transpose() * ws.dec.out;

        // Decoder stack.
        Mat dx = layernorm_backward(ddec_out, dec_lnf_, ws.dec.lnf);
        Mat denc_out = Mat::Zero(ws.enc.out.rows(), ws.enc.out.cols());
        for (std::size_t l = dec_layers_.size(); l-- > 0;) {
            auto& lc = ws.dec.layers[l];
            const auto& idx = dec_layers_[l];

            Mat df = dx;
            dropout_backward(df, lc.drop3);
            Mat da3 = ffn_backward(df, idx.ffn, lc.ffn);
            Mat dx_mid2 = dx + layernorm_backward(da3, idx.ln3, lc.ln3);

            Mat dc = dx_mid2;
            dropout_backward(dc, lc.drop2);
            auto [da2, denc] = attention_backward(dc, lc.cross_attn.input, ws.enc.out, idx.cross_attn, bsz, dec_len,
                                                  enc_len, batch.enc_lengths, false, lc.cross_attn);
            denc_out += denc;
            Mat dx_mid1 = dx_mid2 + layernorm_backward(da2, idx.ln2, lc.ln2);

            Mat do_ = dx_mid1;
            dropout_backward(do_, lc.drop1);
            auto [da_q, da_kv] = attention_backward(do_, lc.self_attn.input, lc.self_attn.input, idx.self_attn, bsz,
                                                    dec_len, dec_len, batch.dec_lengths, true, lc.self_attn);
            Mat da = da_q + da_kv;
            dx = dx_mid1 + layernorm_backward(da, idx.ln1, lc.ln1);
        }
        dropout_backward(dx, ws.dec.drop_embed);
        embed_backward(batch.decoder_input_ids, dx);

        // Encoder stack.
        Mat dxe = layernorm_backward(denc_out, enc_lnf_, ws.enc.lnf);
        for (std::size_t l = enc_layers_.size(); l-- > 0;) {
            auto& lc = ws.enc.layers[l];
            const auto& idx = enc_layers_[l];

            Mat df = dxe;
            dropout_backward(df, lc.drop2);
            Mat da2 = ffn_backward(df, idx.ffn, lc.ffn);
            Mat dx_mid = dxe + layernorm_backward(da2, idx.ln2, lc.ln2);

            Mat do_ = dx_mid;
            dropout_backward(do_, lc.drop1);
            auto [da_q, da_kv] = attention_backward(do_, lc.attn.input, lc.attn.input, idx.attn, bsz, enc_len,
                                                    enc_len, batch.enc_lengths, false, lc.attn);
            Mat da = da_q + da_kv;
            dxe = dx_mid + layernorm_backward(da, idx.ln1, lc.ln1);
        }
        dropout_backward(dxe, ws.enc.drop_embed);
        embed_backward(batch.encoder_ids, dxe);
    }

    // ------------------------------------------------------------------
    // Optimizer
    // ------------------------------------------------------------------

    void clip_gradients() {
        double sq = 0.0;
        for (const auto& t : tensors_)
            for (Eigen::Index i = 0; i < t.grad.size(); ++i) {
                const double g = static_cast<double>(t.grad.data()[i]);
                sq += g * g;
            }
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm)) throw std::runtime_error("train_step: non-finite gradient norm; step aborted");
        if (norm > opt_cfg_.clip_norm && norm > 0.0) {
            const S scale = static_cast<S>(opt_cfg_.clip_norm / norm);
            for (auto& t : tensors_) t.grad *= scale;
        }
    }

    void apply_adam() {
        const std::int64_t t = step_ + 1;
        const double lr = opt_cfg_.lr_at(t);
        const double b1 = opt_cfg_.beta1, b2 = opt_cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (auto& tn : tensors_) {
            for (Eigen::Index i = 0; i < tn.value.size(); ++i) {
                const double g = static_cast<double>(tn.grad.data()[i]);
                const double m = b1 * static_cast<double>(tn.m.data()[i]) + (1.0 - b1) * g;
                const double v = b2 * static_cast<double>(tn.v.data()[i]) + (1.0 - b2) * g * g;
                tn.m.data()[i] = static_cast<S>(m);
                tn.v.data()[i] = static_cast<S>(v);
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                tn.value.data()[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + opt_cfg_.eps));
            }
        }
    }

    // Log-probabilities at the last decoder position for a single sequence.
    Vec decoder_logprobs_last(const Mat& enc_out, int enc_len, const std::vector<int>& dec_ids) {
        Batch b;
        b.decoder_input_ids.push_back(dec_ids);
        b.decoder_target_ids.push_back(std::vector<int>(dec_ids.size(), 0));
        b.loss_mask.push_back(std::vector<bool>(dec_ids.size(), true));
        std::vector<int> pos(dec_ids.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
        b.decoder_positions.push_back(std::move(pos));
        b.dec_lengths.push_back(static_cast<int>(dec_ids.size()));
        b.enc_lengths.push_back(enc_len);

        Workspace ws;
        ws.enc.out = enc_out;
        ws.enc.seq_len = enc_len;
        decoder_forward(b, Mode::eval, nullptr, ws, false);
        Vec logits = (ws.dec.out.row(ws.dec.out.rows() - 1) * val(embed_).transpose()).transpose();
        const S mx = logits.maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < logits.size(); ++j) z += std::exp(static_cast<double>(logits[j] - mx));
        const S logz = static_cast<S>(std::log(z)) + mx;
        return logits.array() - logz;
    }

    ModelConfig cfg_;
    OptimizerConfig opt_cfg_;
    std::int64_t step_ = 0;

    std::vector<Tensor> tensors_;
    int embed_ = -1;
    std::vector<EncLayerIdx> enc_layers_;
    std::vector<DecLayerIdx> dec_layers_;
    LNIdx enc_lnf_, dec_lnf_;
    Mat positions_;
};

using TransformerF = Transformer<float>;
using TransformerD = Transformer<double>;

}  // namespace mtlab::model
