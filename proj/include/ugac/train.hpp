#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ugac/data.hpp"
#include "ugac/errors.hpp"
#include "ugac/io.hpp"
#include "ugac/losses.hpp"
#include "ugac/nets.hpp"
#include "ugac/rng.hpp"
#include "ugac/tensor.hpp"

namespace ugac::train {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 200;
    int batch_size = 2;
    double lr0 = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    double lambda1 = 10.0;
    double lambda2 = 2.0;
    int buffer_capacity = 20;
    std::uint64_t seed = 0;

    int image_channels = 1;
    int image_size = 64;
    int base_width = 16;
    int depth = 3;
    int cascade_len = 2;
    double dropout_p = 0.2;
    int disc_base_width = 16;
    int disc_n_layers = 3;

    bool baseline_l1 = false; // force (alpha, beta) = (1, 1): plain L1 cycle
    bool augment = true;
    int checkpoint_every = 0; // epochs; 0 = final checkpoint only

    void validate() const {
        if (epochs < 1 || batch_size < 1 || buffer_capacity < 1)
            throw DomainError("TrainConfig: epochs, batch_size, buffer_capacity must be >= 1");
        if (!(lr0 > 0.0) || !(adam_eps > 0.0))
            throw DomainError("TrainConfig: lr0 and adam_eps must be positive");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
            !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw DomainError("TrainConfig: Adam betas must be in [0, 1)");
        if (!(lambda1 > 0.0) || !(lambda2 >= 0.0))
            throw DomainError("TrainConfig: lambda1 must be > 0 and lambda2 >= 0");
        generator_config().validate();
        discriminator_config().validate();
        if (image_size % (1 << depth) != 0)
            throw DomainError("TrainConfig: image_size must be divisible by 2^depth");
    }

    nets::GeneratorConfig generator_config() const {
        return {image_channels, image_channels, base_width, depth, cascade_len, dropout_p};
    }
    nets::DiscriminatorConfig discriminator_config() const {
        return {image_channels, disc_base_width, disc_n_layers};
    }
    losses::LossWeights loss_weights() const { return {lambda1, lambda2}; }
};

inline json config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr0", c.lr0},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"lambda1", c.lambda1},
                {"lambda2", c.lambda2},
                {"buffer_capacity", c.buffer_capacity},
                {"seed", c.seed},
                {"image_channels", c.image_channels},
                {"image_size", c.image_size},
                {"base_width", c.base_width},
                {"depth", c.depth},
                {"cascade_len", c.cascade_len},
                {"dropout_p", c.dropout_p},
                {"disc_base_width", c.disc_base_width},
                {"disc_n_layers", c.disc_n_layers},
                {"baseline_l1", c.baseline_l1},
                {"augment", c.augment},
                {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr0 = j.value("lr0", c.lr0);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
    c.seed = j.value("seed", c.seed);
    c.image_channels = j.value("image_channels", c.image_channels);
    c.image_size = j.value("image_size", c.image_size);
    c.base_width = j.value("base_width", c.base_width);
    c.depth = j.value("depth", c.depth);
    c.cascade_len = j.value("cascade_len", c.cascade_len);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.disc_base_width = j.value("disc_base_width", c.disc_base_width);
    c.disc_n_layers = j.value("disc_n_layers", c.disc_n_layers);
    c.baseline_l1 = j.value("baseline_l1", c.baseline_l1);
    c.augment = j.value("augment", c.augment);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    return c;
}

/// key=value run config, '#' starts a comment. Keys match the JSON field
/// names; every value has a default, so an empty file is a valid config.
inline TrainConfig parse_config_text(std::istream& is) {
    json j = json::object();
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        static const json defaults = config_to_json(TrainConfig{});
        if (!defaults.contains(key))
            throw DataError("config line " + std::to_string(line_no) + ": unknown key '" +
                            key + "'");
        if (defaults[key].is_boolean()) {
            if (val == "true" || val == "1") j[key] = true;
            else if (val == "false" || val == "0") j[key] = false;
            else
                throw DataError("config line " + std::to_string(line_no) +
                                ": expected boolean for '" + key + "'");
        } else if (defaults[key].is_number_float()) {
            j[key] = std::stod(val);
        } else {
            j[key] = static_cast<std::int64_t>(std::stoll(val));
        }
    }
    return config_from_json(j);
}

inline TrainConfig parse_config_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file " + path.string());
    try {
        return parse_config_text(is);
    } catch (const std::invalid_argument&) {
        throw DataError("config file " + path.string() + ": malformed number");
    }
}

inline std::string config_echo(const TrainConfig& c) {
    const json j = config_to_json(c);
    std::ostringstream os;
    for (auto it = j.begin(); it != j.end(); ++it)
        os << it.key() << "=" << it.value().dump() << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

/// First/second Adam moments for one parameter group, plus the shared step
/// count used for bias correction.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;

    void match(const std::vector<Tensor>& params) {
        m.resize(params.size());
        v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (m[i].size() != params[i].numel()) m[i].assign(params[i].numel(), 0.0);
            if (v[i].size() != params[i].numel()) v[i].assign(params[i].numel(), 0.0);
        }
    }
};

/// Standard Adam update with bias correction, reading each parameter's
/// accumulated gradient.
inline void adam_step(std::vector<Tensor>& params, AdamState& st, double lr, double beta1,
                      double beta2, double eps) {
    st.match(params);
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const std::vector<double>& g = p.grad();
        if (g.size() != p.numel())
            throw DimensionError("adam_step: gradient/parameter size mismatch");
        std::vector<double>& m = st.m[i];
        std::vector<double>& v = st.v[i];
        double* pv = p.data();
        for (std::size_t k = 0; k < g.size(); ++k) {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            pv[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// lr0 * (1 + cos(pi * step / total)) / 2; non-increasing in step.
inline double cosine_lr(long step, long total_steps, double lr0) {
    if (total_steps < 1) throw DomainError("cosine_lr: total_steps must be >= 1");
    const double frac =
        std::min(1.0, std::max(0.0, static_cast<double>(step) / static_cast<double>(total_steps)));
    return lr0 * (1.0 + std::cos(3.14159265358979323846 * frac)) / 2.0;
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

/// History of generated images for the discriminator updates. The newest
/// image always enters storage (FIFO eviction once full); the returned image
/// is the new one, or with probability 1/2 once full, a copy of a uniformly
/// random stored one. A returned image is therefore never older than
/// capacity+1 pushes.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw DomainError("ReplayBuffer: capacity must be >= 1");
    }

    Tensor push_sample(const Tensor& image, Rng& rng) {
        if (slots_.size() < capacity_) {
            slots_.push_back(image.detach());
            return image;
        }
        Tensor out = image;
        if (rng.bernoulli(0.5)) {
            const std::size_t idx = static_cast<std::size_t>(rng.integer(slots_.size()));
            out = slots_[idx].detach();
        }
        slots_.pop_front();
        slots_.push_back(image.detach());
        return out;
    }

    std::size_t size() const { return slots_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::deque<Tensor>& slots() const { return slots_; }

    void restore(std::vector<Tensor> images) {
        if (images.size() > capacity_) throw DataError("ReplayBuffer: more images than capacity");
        slots_.assign(images.begin(), images.end());
    }

private:
    std::size_t capacity_;
    std::deque<Tensor> slots_;
};

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct StepMetrics {
    double loss_g = 0.0;
    double loss_d = 0.0;
    double loss_ucyc = 0.0;
    double loss_adv_g = 0.0;
};

struct EpochLog {
    int epoch = 0; // 1-based
    double loss_g = 0.0, loss_d = 0.0, loss_ucyc = 0.0, loss_adv_g = 0.0, lr = 0.0;
};

constexpr const char* kMetricsCsvHeader = "epoch,loss_g,loss_d,loss_ucyc,loss_adv_g,lr";

/// Full UGAC training: alternating generator/discriminator least-squares
/// updates with the uncertainty-aware cycle loss, Adam, cosine annealing and
/// fake-image replay buffers. Deterministic given (config, dataset, seed).
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg)
        : cfg_(cfg), g_a_(cfg.generator_config()), g_b_(cfg.generator_config()),
          d_a_(cfg.discriminator_config()), d_b_(cfg.discriminator_config()),
          buf_fake_a_(static_cast<std::size_t>(cfg.buffer_capacity)),
          buf_fake_b_(static_cast<std::size_t>(cfg.buffer_capacity)), rng_(cfg.seed) {
        cfg_.validate();
        Rng init_rng(mix_seed(cfg.seed, 0x1217));
        g_a_.init(init_rng);
        g_b_.init(init_rng);
        d_a_.init(init_rng);
        d_b_.init(init_rng);
        cache_params();
    }

    const TrainConfig& config() const { return cfg_; }
    nets::CasUNet3Head& g_a() { return g_a_; }
    nets::CasUNet3Head& g_b() { return g_b_; }
    nets::NLayerDiscriminator& d_a() { return d_a_; }
    nets::NLayerDiscriminator& d_b() { return d_b_; }
    const nets::CasUNet3Head& g_a() const { return g_a_; }
    const nets::CasUNet3Head& g_b() const { return g_b_; }
    long global_step() const { return global_step_; }
    long total_steps() const { return total_steps_; }
    Rng& rng() { return rng_; }

    void set_total_steps(long t) { total_steps_ = t; }

    struct GeneratorPhaseResult {
        double loss_g = 0.0, loss_ucyc = 0.0, loss_adv_g = 0.0;
        Tensor fake_a, fake_b; // detached translations for the discriminator phase
    };

    /// Forward both cycles, combine cycle + adversarial losses, update both
    /// generators. Discriminator parameters are left untouched.
    GeneratorPhaseResult generator_phase(const Tensor& batch_a, const Tensor& batch_b,
                                         double lr) {
        const nets::ForwardMode mode{cfg_.dropout_p > 0.0, &rng_};
        zero_all_grads();
        auto maps_ab = nets::to_ggd_params(g_a_.forward(batch_a, mode));   // a -> b_hat
        check_finite(maps_ab, "a->b");
        auto maps_aba = nets::to_ggd_params(g_b_.forward(maps_ab.mean, mode)); // -> a_rec
        check_finite(maps_aba, "a->b->a");
        auto maps_ba = nets::to_ggd_params(g_b_.forward(batch_b, mode));   // b -> a_hat
        check_finite(maps_ba, "b->a");
        auto maps_bab = nets::to_ggd_params(g_a_.forward(maps_ba.mean, mode)); // -> b_rec
        check_finite(maps_bab, "b->a->b");

        losses::CycleTerms terms_a{maps_aba.mean, maps_aba.alpha, maps_aba.beta, batch_a};
        losses::CycleTerms terms_b{maps_bab.mean, maps_bab.alpha, maps_bab.beta, batch_b};
        if (cfg_.baseline_l1) {
            terms_a.alpha = Tensor::ones(batch_a.shape());
            terms_a.beta = Tensor::ones(batch_a.shape());
            terms_b.alpha = Tensor::ones(batch_b.shape());
            terms_b.beta = Tensor::ones(batch_b.shape());
        }
        Tensor ucyc = losses::loss_ucyc(terms_a, terms_b);

        GeneratorPhaseResult r;
        Tensor loss_g;
        if (cfg_.lambda2 > 0.0) {
            Tensor adv_g = losses::adv_generator_loss(d_a_.forward(maps_ab.mean),
                                                      d_b_.forward(maps_ba.mean));
            loss_g = losses::total_generator_loss(ucyc, adv_g, cfg_.loss_weights());
            r.loss_adv_g = adv_g.item();
        } else {
            loss_g = cfg_.lambda1 * ucyc;
        }
        r.loss_ucyc = ucyc.item();
        r.loss_g = loss_g.item();
        if (!std::isfinite(r.loss_g))
            throw NumericError("generator_phase: non-finite loss at step " +
                               std::to_string(global_step_) + " (ucyc=" +
                               std::to_string(r.loss_ucyc) + ", adv=" +
                               std::to_string(r.loss_adv_g) + ")");
        backward(loss_g);
        adam_step(g_params_, opt_g_, lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
        r.fake_b = maps_ab.mean.detach();
        r.fake_a = maps_ba.mean.detach();
        return r;
    }

    /// Update both discriminators on real batches and buffered fakes.
    /// Generator parameters are left untouched.
    double discriminator_phase(const Tensor& batch_a, const Tensor& batch_b,
                               const Tensor& fake_a, const Tensor& fake_b, double lr) {
        zero_all_grads();
        Tensor buf_b = buf_fake_b_.push_sample(fake_b, rng_);
        Tensor buf_a = buf_fake_a_.push_sample(fake_a, rng_);
        Tensor loss_d = losses::adv_discriminator_loss(d_a_.forward(batch_b),
                                                       d_a_.forward(buf_b),
                                                       d_b_.forward(batch_a),
                                                       d_b_.forward(buf_a));
        const double value = loss_d.item();
        if (!std::isfinite(value))
            throw NumericError("discriminator_phase: non-finite loss at step " +
                               std::to_string(global_step_));
        backward(loss_d);
        adam_step(d_params_, opt_d_, lr, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps);
        return value;
    }

    /// One alternating update: generators first (cycle + adversarial), then
    /// discriminators on buffered fakes. Batches must be [B,C,H,W] in [0,1].
    StepMetrics train_step(const Tensor& batch_a, const Tensor& batch_b) {
        if (total_steps_ < 1)
            throw InternalError("train_step: total_steps not set (call fit or set_total_steps)");
        const double lr = cosine_lr(global_step_, total_steps_, cfg_.lr0);
        const GeneratorPhaseResult g = generator_phase(batch_a, batch_b, lr);
        const double loss_d = discriminator_phase(batch_a, batch_b, g.fake_a, g.fake_b, lr);
        last_lr_ = lr;
        ++global_step_;
        return {g.loss_g, loss_d, g.loss_ucyc, g.loss_adv_g};
    }

    /// Epoch loop with per-epoch independent domain shuffles, flip
    /// augmentation, CSV metric log and checkpoint cadence.
    std::vector<EpochLog> fit(const data::UnpairedDataset& ds, const fs::path& out_dir) {
        check_dataset(ds);
        const long steps_per_epoch = static_cast<long>(
            std::min(ds.domain_a.size(), ds.domain_b.size()) /
            static_cast<std::size_t>(cfg_.batch_size));
        if (steps_per_epoch < 1)
            throw DataError("fit: dataset smaller than one batch");
        const long want_total = static_cast<long>(cfg_.epochs) * steps_per_epoch;
        if (total_steps_ == 0) total_steps_ = want_total;
        else if (total_steps_ != want_total)
            throw DataError("fit: resumed run has a different step horizon");

        fs::create_directories(out_dir);
        const fs::path csv_path = out_dir / "metrics.csv";
        const bool fresh_csv =
            epoch_done_ == 0 || !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
        std::ofstream csv(csv_path, fresh_csv ? std::ios::trunc : std::ios::app);
        if (!csv) throw DataError("fit: cannot open metrics.csv in " + out_dir.string());
        if (fresh_csv) csv << kMetricsCsvHeader << "\n";
        csv << std::setprecision(17);

        std::vector<EpochLog> logs;
        for (int epoch = epoch_done_; epoch < cfg_.epochs; ++epoch) {
            auto order_a = shuffled_indices(ds.domain_a.size());
            auto order_b = shuffled_indices(ds.domain_b.size());
            EpochLog log;
            log.epoch = epoch + 1;
            for (long s = 0; s < steps_per_epoch; ++s) {
                Tensor batch_a = make_batch(ds.domain_a, order_a, s);
                Tensor batch_b = make_batch(ds.domain_b, order_b, s);
                const StepMetrics sm = train_step(batch_a, batch_b);
                log.loss_g += sm.loss_g;
                log.loss_d += sm.loss_d;
                log.loss_ucyc += sm.loss_ucyc;
                log.loss_adv_g += sm.loss_adv_g;
            }
            const double inv = 1.0 / static_cast<double>(steps_per_epoch);
            log.loss_g *= inv;
            log.loss_d *= inv;
            log.loss_ucyc *= inv;
            log.loss_adv_g *= inv;
            log.lr = last_lr_;
            csv << log.epoch << "," << log.loss_g << "," << log.loss_d << "," << log.loss_ucyc
                << "," << log.loss_adv_g << "," << log.lr << "\n";
            csv.flush();
            logs.push_back(log);
            epoch_done_ = epoch + 1;
            if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0) {
                std::ostringstream name;
                name << "ckpt_epoch_" << std::setw(4) << std::setfill('0') << (epoch + 1)
                     << ".ugck";
                save_checkpoint(out_dir / name.str());
            }
        }
        save_checkpoint(out_dir / "ckpt_final.ugck");
        return logs;
    }

    // -- checkpointing ------------------------------------------------------

    void save_checkpoint(const fs::path& path) const {
        io::Container c;
        json meta{{"format", "ugac-checkpoint"},
                  {"version", 1},
                  {"config", config_to_json(cfg_)},
                  {"epoch_done", epoch_done_},
                  {"global_step", global_step_},
                  {"total_steps", total_steps_},
                  {"opt_g_step", opt_g_.step},
                  {"opt_d_step", opt_d_.step},
                  {"rng", rng_.state()}};
        c.meta = meta.dump();
        append_params(c, g_a_.named_params("g_a"));
        append_params(c, g_b_.named_params("g_b"));
        append_params(c, d_a_.named_params("d_a"));
        append_params(c, d_b_.named_params("d_b"));
        append_moments(c, "opt_g", opt_g_, g_params_);
        append_moments(c, "opt_d", opt_d_, d_params_);
        append_buffer(c, "buf_a", buf_fake_a_);
        append_buffer(c, "buf_b", buf_fake_b_);
        io::save_container(path, c);
    }

    static Trainer load_checkpoint(const fs::path& path) {
        io::Container c = io::load_container(path);
        json meta = json::parse(c.meta, nullptr, false);
        if (meta.is_discarded() || meta.value("format", "") != "ugac-checkpoint")
            throw DataError("not a ugac checkpoint: " + path.string());
        Trainer t(config_from_json(meta.at("config")));
        t.epoch_done_ = meta.value("epoch_done", 0);
        t.global_step_ = meta.value("global_step", 0L);
        t.total_steps_ = meta.value("total_steps", 0L);
        t.opt_g_.step = meta.value("opt_g_step", 0L);
        t.opt_d_.step = meta.value("opt_d_step", 0L);
        t.rng_.set_state(meta.at("rng").get<std::string>());

        std::map<std::string, Tensor> by_name;
        for (auto& [name, tensor] : c.entries) by_name.emplace(name, tensor);
        auto take = [&](const std::string& name) {
            auto it = by_name.find(name);
            if (it == by_name.end())
                throw DataError("checkpoint missing entry '" + name + "'");
            Tensor out = it->second;
            by_name.erase(it);
            return out;
        };
        auto restore_params = [&](nets::NamedParams params) {
            for (auto& [name, tensor] : params) {
                Tensor stored = take(name);
                if (stored.shape() != tensor.shape())
                    throw DataError("checkpoint entry '" + name + "' has shape " +
                                    shape_str(stored.shape()) + ", expected " +
                                    shape_str(tensor.shape()));
                tensor.values() = stored.values();
            }
        };
        restore_params(t.g_a_.named_params("g_a"));
        restore_params(t.g_b_.named_params("g_b"));
        restore_params(t.d_a_.named_params("d_a"));
        restore_params(t.d_b_.named_params("d_b"));
        t.restore_moments(take, "opt_g", t.opt_g_, t.g_params_);
        t.restore_moments(take, "opt_d", t.opt_d_, t.d_params_);
        t.restore_buffer(by_name, "buf_a", t.buf_fake_a_);
        t.restore_buffer(by_name, "buf_b", t.buf_fake_b_);
        return t;
    }

    int epoch_done() const { return epoch_done_; }

private:
    void cache_params() {
        g_params_.clear();
        d_params_.clear();
        for (auto& [name, t] : g_a_.named_params("g_a")) g_params_.push_back(t);
        for (auto& [name, t] : g_b_.named_params("g_b")) g_params_.push_back(t);
        for (auto& [name, t] : d_a_.named_params("d_a")) d_params_.push_back(t);
        for (auto& [name, t] : d_b_.named_params("d_b")) d_params_.push_back(t);
    }

    void zero_all_grads() {
        for (Tensor& p : g_params_) p.zero_grad();
        for (Tensor& p : d_params_) p.zero_grad();
    }

    void check_finite(const nets::GgdMaps& maps, const char* which) const {
        if (!maps.mean.finite() || !maps.alpha.finite() || !maps.beta.finite())
            throw NumericError(std::string("generator_phase: non-finite activations in ") +
                               which + " at step " + std::to_string(global_step_));
    }

    void check_dataset(const data::UnpairedDataset& ds) const {
        if (ds.domain_a.empty() || ds.domain_b.empty()) throw DataError("fit: empty dataset");
        if (ds.channels != static_cast<std::size_t>(cfg_.image_channels) ||
            ds.height != static_cast<std::size_t>(cfg_.image_size) ||
            ds.width != static_cast<std::size_t>(cfg_.image_size))
            throw DataError("fit: dataset dims do not match the configured image size");
    }

    std::vector<std::size_t> shuffled_indices(std::size_t n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng_.integer(i));
            std::swap(idx[i - 1], idx[j]);
        }
        return idx;
    }

    Tensor make_batch(const std::vector<Tensor>& images, const std::vector<std::size_t>& order,
                      long step) {
        std::vector<Tensor> picked;
        picked.reserve(static_cast<std::size_t>(cfg_.batch_size));
        for (int i = 0; i < cfg_.batch_size; ++i) {
            const Tensor& img =
                images[order[static_cast<std::size_t>(step) *
                                 static_cast<std::size_t>(cfg_.batch_size) +
                             static_cast<std::size_t>(i)]];
            picked.push_back(cfg_.augment ? data::augment_flip(img, rng_) : img);
        }
        return data::stack_batch(picked);
    }

    static void append_params(io::Container& c, const nets::NamedParams& params) {
        for (const auto& [name, t] : params) c.entries.emplace_back(name, t.detach());
    }

    static void append_moments(io::Container& c, const std::string& prefix, const AdamState& st,
                               const std::vector<Tensor>& params) {
        for (std::size_t i = 0; i < st.m.size(); ++i) {
            std::ostringstream key;
            key << prefix << "." << std::setw(4) << std::setfill('0') << i;
            c.entries.emplace_back(key.str() + ".m",
                                   Tensor::from(st.m[i], params[i].shape()));
            c.entries.emplace_back(key.str() + ".v",
                                   Tensor::from(st.v[i], params[i].shape()));
        }
    }

    static void append_buffer(io::Container& c, const std::string& prefix,
                              const ReplayBuffer& buf) {
        std::size_t i = 0;
        for (const Tensor& t : buf.slots()) {
            std::ostringstream key;
            key << prefix << "." << std::setw(4) << std::setfill('0') << i++;
            c.entries.emplace_back(key.str(), t);
        }
    }

    template <class Take>
    void restore_moments(Take&& take, const std::string& prefix, AdamState& st,
                         const std::vector<Tensor>& params) {
        if (st.step == 0) return; // nothing was optimized yet
        st.match(params);
        for (std::size_t i = 0; i < params.size(); ++i) {
            std::ostringstream key;
            key << prefix << "." << std::setw(4) << std::setfill('0') << i;
            st.m[i] = take(key.str() + ".m").values();
            st.v[i] = take(key.str() + ".v").values();
        }
    }

    void restore_buffer(const std::map<std::string, Tensor>& by_name, const std::string& prefix,
                        ReplayBuffer& buf) {
        std::vector<Tensor> images;
        for (std::size_t i = 0;; ++i) {
            std::ostringstream key;
            key << prefix << "." << std::setw(4) << std::setfill('0') << i;
            auto it = by_name.find(key.str());
            if (it == by_name.end()) break;
            images.push_back(it->second);
        }
        buf.restore(std::move(images));
    }

    TrainConfig cfg_;
    nets::CasUNet3Head g_a_, g_b_;
    nets::NLayerDiscriminator d_a_, d_b_;
    std::vector<Tensor> g_params_, d_params_;
    AdamState opt_g_, opt_d_;
    ReplayBuffer buf_fake_a_, buf_fake_b_;
    Rng rng_;
    long global_step_ = 0;
    long total_steps_ = 0;
    int epoch_done_ = 0;
    double last_lr_ = 0.0;
};

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

/// Dropout-off single-image forward; returns the GGD maps as [C,H,W].
inline nets::GgdMaps translate_image(const nets::CasUNet3Head& g, const Tensor& image) {
    NoGradGuard guard;
    Tensor batch = data::stack_batch({image});
    auto maps = nets::to_ggd_params(g.forward(batch, {}));
    return {data::unstack(maps.mean, 0), data::unstack(maps.alpha, 0),
            data::unstack(maps.beta, 0)};
}

/// Dropout-active mean-head forward for Monte-Carlo uncertainty passes.
inline Tensor translate_mean_dropout(const nets::CasUNet3Head& g, const Tensor& image,
                                     Rng& rng) {
    NoGradGuard guard;
    Tensor batch = data::stack_batch({image});
    nets::ForwardMode mode{true, &rng};
    return data::unstack(g.forward(batch, mode).mean, 0);
}

/// Mean over images and both directions of the mean-abs cycle residual,
/// dropout off. Training progress probe for the smoke criteria.
inline double cycle_reconstruction_l1(const nets::CasUNet3Head& g_a,
                                      const nets::CasUNet3Head& g_b,
                                      const data::UnpairedDataset& ds) {
    NoGradGuard guard;
    auto mean_abs_residual = [](const Tensor& recon, const Tensor& orig) {
        double acc = 0.0;
        for (std::size_t i = 0; i < recon.numel(); ++i)
            acc += std::fabs(recon[i] - orig[i]);
        return acc / static_cast<double>(recon.numel());
    };
    double acc_a = 0.0;
    for (const Tensor& a : ds.domain_a) {
        Tensor b_hat = translate_image(g_a, a).mean;
        Tensor a_rec = translate_image(g_b, b_hat).mean;
        acc_a += mean_abs_residual(a_rec, a);
    }
    double acc_b = 0.0;
    for (const Tensor& b : ds.domain_b) {
        Tensor a_hat = translate_image(g_b, b).mean;
        Tensor b_rec = translate_image(g_a, a_hat).mean;
        acc_b += mean_abs_residual(b_rec, b);
    }
    return 0.5 * (acc_a / static_cast<double>(ds.domain_a.size()) +
                  acc_b / static_cast<double>(ds.domain_b.size()));
}

} // namespace ugac::train
