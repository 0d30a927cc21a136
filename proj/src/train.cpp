#include "adpc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adpc/util.hpp"

namespace adpc::train {

namespace fs = std::filesystem;
using ag::Mat;
using ag::Var;
using nlohmann::json;

void TrainConfig::validate() const {
    model.validate();
    if (lr_base < 0) throw InvalidSpec("lr_base must be non-negative");
    if (batch_size <= 0 || epochs <= 0) throw InvalidSpec("batch_size/epochs");
    if (warmup_ratio < 0 || warmup_ratio >= 1) throw InvalidSpec("warmup_ratio");
    if (weight_decay < 0) throw InvalidSpec("weight_decay");
    if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
        throw InvalidSpec("split fractions must sum to 1");
    if (vocab_cap < 4 || vocab_min_freq < 1) throw InvalidSpec("vocab settings");
}

json TrainConfig::to_json() const {
    return json{{"model", model.to_json()},
                {"lr_base", lr_base},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"warmup_ratio", warmup_ratio},
                {"weight_decay", weight_decay},
                {"seed", seed},
                {"split_train", split_train},
                {"split_val", split_val},
                {"split_test", split_test},
                {"vocab_min_freq", vocab_min_freq},
                {"vocab_cap", vocab_cap}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    if (j.contains("model")) c.model = nn::ModelConfig::from_json(j.at("model"));
    c.lr_base = j.value("lr_base", c.lr_base);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.split_train = j.value("split_train", c.split_train);
    c.split_val = j.value("split_val", c.split_val);
    c.split_test = j.value("split_test", c.split_test);
    c.vocab_min_freq = j.value("vocab_min_freq", c.vocab_min_freq);
    c.vocab_cap = j.value("vocab_cap", c.vocab_cap);
    return c;
}

uint64_t TrainConfig::digest() const { return util::fnv1a(to_json().dump()); }

double cosine_lr(long step, long total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps) throw InvalidSpec("cosine_lr: step range");
    const double warm = cfg.warmup_ratio * static_cast<double>(total_steps);
    const double s = static_cast<double>(step);
    if (warm > 0 && s < warm) return cfg.lr_base * s / warm;
    if (total_steps == 0) return cfg.lr_base;
    const double progress =
        warm >= static_cast<double>(total_steps)
            ? 1.0
            : (s - warm) / (static_cast<double>(total_steps) - warm);
    return cfg.lr_base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void optimizer_step(nn::ParameterStore& params, const nn::GradVec& grads,
                    AdamWState& state, double lr, double weight_decay) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    if (grads.size() != params.size())
        throw ShapeMismatch("optimizer_step: grads misaligned with parameters");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i] = Mat::Zero(params.at(static_cast<int>(i)).rows(),
                                   params.at(static_cast<int>(i)).cols());
            state.v[i] = state.m[i];
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Mat& p = params.at(static_cast<int>(i));
        Mat g = grads[i].size() == 0 ? Mat::Zero(p.rows(), p.cols()) : grads[i];
        if (g.rows() != p.rows() || g.cols() != p.cols())
            throw ShapeMismatch("optimizer_step: gradient shape for " +
                                params.name(static_cast<int>(i)));
        if (!g.allFinite())
            throw NonFiniteGradient("non-finite gradient in " +
                                    params.name(static_cast<int>(i)));
        Mat& m = state.m[i];
        Mat& v = state.v[i];
        m = kBeta1 * m + (1.0 - kBeta1) * g;
        v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
        Mat update = (m / bc1).array() / ((v / bc2).array().sqrt() + kEps);
        p -= lr * update;
        if (weight_decay > 0 && !nn::is_no_decay_param(params.name(static_cast<int>(i))))
            p -= lr * weight_decay * p;
    }
}

namespace {

constexpr char kMagic[8] = {'A', 'D', 'P', 'C', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError("truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParameterStore& params,
                     uint64_t config_digest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingFile("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, config_digest);
    put<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(static_cast<int>(i));
        const Mat& m = params.at(static_cast<int>(i));
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint32_t>(out, static_cast<uint32_t>(m.rows()));
        put<uint32_t>(out, static_cast<uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
    }
    if (!out) throw MissingFile("checkpoint write failed: " + path);
}

nn::ParameterStore load_checkpoint(const std::string& path, uint64_t expected_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("bad checkpoint magic: " + path);
    const uint32_t version = get<uint32_t>(in);
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const uint64_t digest = get<uint64_t>(in);
    if (digest != expected_digest)
        throw CheckpointError("config digest mismatch: checkpoint was written by a "
                              "different configuration");
    const uint32_t n = get<uint32_t>(in);
    nn::ParameterStore store;
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t len = get<uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const uint32_t rows = get<uint32_t>(in);
        const uint32_t cols = get<uint32_t>(in);
        Mat m(rows, cols);
        for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t c = 0; c < cols; ++c) m(r, c) = get<double>(in);
        store.add(name, std::move(m));
    }
    return store;
}

std::vector<LoadedSample> load_samples(const std::vector<SampleRecord>& records,
                                       const text::Vocabulary& vocab,
                                       const nn::ModelConfig& cfg) {
    std::vector<LoadedSample> out(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        LoadedSample s;
        s.id = rec.id;
        if (cfg.visual_source == nn::VisualSource::kVolume)
            s.input.visual = data::read_volume(rec.visual);
        else
            s.input.visual = data::read_features(rec.visual);
        text::TokenSequence seq =
            text::tokenize(util::read_file(rec.summary), vocab, cfg.max_len);
        s.input.token_ids = std::move(seq.ids);
        s.input.token_mask = std::move(seq.mask);
        s.input.label = data::label_index(rec.label, cfg.n_classes);
        out[i] = std::move(s);
    }
    return out;
}

namespace {

struct EvalOutput {
    std::vector<int> preds;
    std::vector<std::vector<double>> probs;
};

EvalOutput forward_all(const nn::ParameterStore& params, const nn::ModelConfig& cfg,
                       const std::vector<LoadedSample>& samples, int n_threads) {
    EvalOutput out;
    out.preds.resize(samples.size());
    out.probs.resize(samples.size());
    util::parallel_for(samples.size(), n_threads, [&](size_t i) {
        nn::Binder bind(params);
        Var logits = frontdoor::adpc_forward(samples[i].input, bind, cfg, {});
        const Mat probs = nn::softmax(logits.value(), 1);
        std::vector<double> row(static_cast<size_t>(probs.cols()));
        int best = 0;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            row[static_cast<size_t>(c)] = probs(0, c);
            if (probs(0, c) > probs(0, best)) best = static_cast<int>(c);
        }
        out.preds[i] = best;
        out.probs[i] = std::move(row);
    });
    return out;
}

MetricsReport eval_samples(const nn::ParameterStore& params, const nn::ModelConfig& cfg,
                           const std::vector<LoadedSample>& samples, int n_threads) {
    EvalOutput eo = forward_all(params, cfg, samples, n_threads);
    std::vector<int> labels(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].input.label;
    return metrics::compute_metrics(labels, eo.preds, eo.probs, cfg.n_classes);
}

std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream out;
    out << "epoch,loss,acc,f1,precision,recall,auc,lr\n";
    for (const auto& e : history) {
        out << e.epoch << ',' << util::format_double(e.loss) << ','
            << util::format_double(e.val.acc) << ',' << util::format_double(e.val.f1)
            << ',' << util::format_double(e.val.precision) << ','
            << util::format_double(e.val.recall) << ','
            << (e.val.auc ? util::format_double(*e.val.auc) : std::string("absent"))
            << ',' << util::format_double(e.lr_last) << '\n';
    }
    return out.str();
}

}  // namespace

SplitRecords split_manifest(const std::vector<SampleRecord>& records,
                            const TrainConfig& cfg) {
    std::vector<int> labels(records.size());
    for (size_t i = 0; i < records.size(); ++i)
        labels[i] = data::label_index(records[i].label, cfg.model.n_classes);
    data::SplitIndices idx = data::stratified_split(labels, cfg.split_train,
                                                    cfg.split_val, cfg.split_test,
                                                    cfg.seed);
    SplitRecords out;
    for (size_t i : idx.train) out.train.push_back(records[i]);
    for (size_t i : idx.val) out.val.push_back(records[i]);
    for (size_t i : idx.test) out.test.push_back(records[i]);
    return out;
}

TrainResult train(const TrainConfig& cfg_in, const std::vector<SampleRecord>& train_recs,
                  const std::vector<SampleRecord>& val_recs, const std::string& out_dir) {
    if (train_recs.empty()) throw InvalidSpec("train: empty training set");
    TrainConfig cfg = cfg_in;
    cfg.validate();
    fs::create_directories(out_dir);

    // vocabulary from the training summaries only
    std::vector<std::string> corpus;
    corpus.reserve(train_recs.size());
    for (const auto& r : train_recs) corpus.push_back(util::read_file(r.summary));
    text::Vocabulary vocab = text::build_vocab(corpus, cfg.vocab_min_freq, cfg.vocab_cap);
    cfg.model.vocab_size = vocab.size();
    cfg.validate();

    std::vector<LoadedSample> train_set = load_samples(train_recs, vocab, cfg.model);
    std::vector<LoadedSample> val_set = load_samples(val_recs, vocab, cfg.model);

    nn::ParameterStore params = nn::init_parameters(cfg.model, cfg.seed);
    AdamWState opt;
    Rng shuffle_rng = Rng(cfg.seed).fork(0x5f17);
    Rng dropout_root = Rng(cfg.seed).fork(0xd709);

    const long n = static_cast<long>(train_set.size());
    const long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = batches_per_epoch * cfg.epochs;

    TrainResult result;
    result.config = cfg;
    const uint64_t digest = cfg.digest();
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();

    long global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = shuffle_rng.fork(static_cast<uint64_t>(epoch));
        std::vector<size_t> perm = erng.permutation(train_set.size());
        double epoch_loss = 0.0;
        double lr_last = 0.0;
        for (long b = 0; b < batches_per_epoch; ++b) {
            const size_t lo = static_cast<size_t>(b) * cfg.batch_size;
            const size_t hi = std::min(train_set.size(), lo + cfg.batch_size);
            const size_t bs = hi - lo;

            std::vector<nn::GradVec> grads(bs);
            std::vector<double> losses(bs, 0.0);
            util::parallel_for(bs, cfg.n_threads, [&](size_t k) {
                const LoadedSample& s = train_set[perm[lo + k]];
                Rng drng = dropout_root.fork(
                    static_cast<uint64_t>(global_step) * 131071u + k);
                nn::Binder bind(params);
                nn::RunCtx ctx;
                ctx.training = true;
                ctx.rng = &drng;
                Var logits = frontdoor::adpc_forward(s.input, bind, cfg.model, ctx);
                Var loss = ag::cross_entropy_logits(logits, s.input.label);
                losses[k] = loss.value()(0, 0);
                ag::backward(loss, 1.0 / static_cast<double>(bs));
                bind.collect(grads[k]);
            });

            nn::GradVec merged(params.size());
            for (size_t k = 0; k < bs; ++k)
                for (size_t i = 0; i < grads[k].size(); ++i) {
                    if (grads[k][i].size() == 0) continue;
                    if (merged[i].size() == 0)
                        merged[i] = grads[k][i];
                    else
                        merged[i] += grads[k][i];
                }

            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            batch_loss /= static_cast<double>(bs);
            if (!std::isfinite(batch_loss))
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    " step " + std::to_string(global_step));
            epoch_loss += batch_loss * static_cast<double>(bs);

            lr_last = cosine_lr(global_step + 1, total_steps, cfg);
            optimizer_step(params, merged, opt, lr_last, cfg.weight_decay);
            ++global_step;
        }
        epoch_loss /= static_cast<double>(n);

        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = epoch_loss;
        stats.lr_last = lr_last;
        if (!val_set.empty())
            stats.val = eval_samples(params, cfg.model, val_set, cfg.n_threads);
        result.history.push_back(stats);

        if (stats.val.acc > result.best_val_acc || result.best_epoch < 0) {
            result.best_val_acc = stats.val.acc;
            result.best_epoch = epoch;
            save_checkpoint(ckpt_path, params, digest);
        }
    }

    result.checkpoint_path = ckpt_path;
    result.vocab_path = (fs::path(out_dir) / "vocab.txt").string();
    result.config_path = (fs::path(out_dir) / "config.json").string();
    result.history_path = (fs::path(out_dir) / "history.csv").string();
    vocab.save(result.vocab_path);
    util::write_file(result.config_path, cfg.to_json().dump(2) + "\n");
    util::write_file(result.history_path, history_csv(result.history));
    return result;
}

LoadedCheckpoint load_run(const std::string& checkpoint_path) {
    const fs::path dir = fs::path(checkpoint_path).parent_path();
    LoadedCheckpoint out;
    const std::string cfg_path = (dir / "config.json").string();
    out.config = TrainConfig::from_json(json::parse(util::read_file(cfg_path)));
    out.params = load_checkpoint(checkpoint_path, out.config.digest());
    out.vocab = text::Vocabulary::load((dir / "vocab.txt").string());
    return out;
}

MetricsReport evaluate(const nn::ParameterStore& params, const TrainConfig& cfg,
                       const text::Vocabulary& vocab,
                       const std::vector<SampleRecord>& records) {
    std::vector<LoadedSample> samples = load_samples(records, vocab, cfg.model);
    return eval_samples(params, cfg.model, samples, cfg.n_threads);
}

MetricsReport evaluate(const std::string& checkpoint_path,
                       const std::vector<SampleRecord>& records) {
    LoadedCheckpoint run = load_run(checkpoint_path);
    return evaluate(run.params, run.config, run.vocab, records);
}

json AblationResult::to_json() const {
    json arms_j = json::array();
    for (const auto& a : arms) {
        arms_j.push_back({{"seed", a.seed},
                          {"full_id", a.full_id.to_json()},
                          {"full_ood", a.full_ood.to_json()},
                          {"ablated_id", a.ablated_id.to_json()},
                          {"ablated_ood", a.ablated_ood.to_json()},
                          {"full_param_count", a.full_param_count},
                          {"ablated_param_count", a.ablated_param_count},
                          {"delta_acc_id", a.full_id.acc - a.ablated_id.acc},
                          {"delta_acc_ood", a.full_ood.acc - a.ablated_ood.acc}});
    }
    return json{{"arms", arms_j},
                {"mean_delta_acc_id", mean_delta_acc_id},
                {"mean_delta_acc_ood", mean_delta_acc_ood}};
}

AblationResult run_ablation(const TrainConfig& cfg,
                            const std::vector<SampleRecord>& train_recs,
                            const std::vector<SampleRecord>& val_recs,
                            const std::vector<SampleRecord>& test_recs,
                            const std::string& out_dir, int n_seeds) {
    if (n_seeds <= 0) throw InvalidSpec("run_ablation: n_seeds must be positive");
    AblationResult result;
    for (int k = 0; k < n_seeds; ++k) {
        AblationArm arm;
        arm.seed = cfg.seed + static_cast<uint64_t>(k);

        for (bool ablate : {false, true}) {
            TrainConfig c = cfg;
            c.seed = arm.seed;
            c.model.ablate_cf_fda = ablate;
            const std::string dir =
                (fs::path(out_dir) / ("seed" + std::to_string(k)) /
                 (ablate ? "ablated" : "full"))
                    .string();
            TrainResult tr = train(c, train_recs, val_recs, dir);
            LoadedCheckpoint best = load_run(tr.checkpoint_path);
            MetricsReport id_m = evaluate(best.params, best.config, best.vocab, val_recs);
            MetricsReport ood_m =
                evaluate(best.params, best.config, best.vocab, test_recs);
            if (ablate) {
                arm.ablated_id = id_m;
                arm.ablated_ood = ood_m;
                arm.ablated_param_count = best.params.scalar_count();
            } else {
                arm.full_id = id_m;
                arm.full_ood = ood_m;
                arm.full_param_count = best.params.scalar_count();
            }
        }
        result.arms.push_back(std::move(arm));
    }
    for (const auto& a : result.arms) {
        result.mean_delta_acc_id += (a.full_id.acc - a.ablated_id.acc);
        result.mean_delta_acc_ood += (a.full_ood.acc - a.ablated_ood.acc);
    }
    result.mean_delta_acc_id /= result.arms.size();
    result.mean_delta_acc_ood /= result.arms.size();
    util::write_file((fs::path(out_dir) / "ablation_report.json").string(),
                     result.to_json().dump(2) + "\n");
    return result;
}

}  // namespace adpc::train
