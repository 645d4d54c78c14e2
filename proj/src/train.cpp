#include "phonssm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "phonssm/analysis.hpp"
#include "phonssm/threading.hpp"

namespace phonssm {

using nlohmann::json;

void adamw_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                AdamState& state, double lr, double weight_decay) {
    if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: size mismatch");
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) throw std::invalid_argument("adamw_step: grad shape mismatch");
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
            v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            // decay decoupled from the adaptive step
            p[j] -= lr * weight_decay * p[j];
            p[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

double lr_at(long step, long total_steps, long warmup_steps, double peak_lr) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("lr_at: step out of range");
    if (warmup_steps > 0 && step <= warmup_steps)
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const double progress = total_steps == warmup_steps
                                ? 1.0
                                : static_cast<double>(step - warmup_steps) /
                                      static_cast<double>(total_steps - warmup_steps);
    return peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Fixed chunk count keeps the gradient accumulation order independent of
// the number of worker threads.
constexpr int kGradChunks = 8;

struct ChunkAccum {
    std::vector<Tensor> grads;
    double loss = 0.0, ce = 0.0, ortho = 0.0, div = 0.0;
    int correct = 0;
    int samples = 0;
};

}  // namespace

TrainResult train_model(const ModelConfig& cfg, const TrainConfig& tc,
                        const DatasetFile& train_ds, const std::string& out_dir) {
    if (tc.warmup_epochs >= tc.epochs)
        throw std::invalid_argument("train: warmup_epochs must be < epochs");
    if (tc.lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
    if (train_ds.records.empty()) throw std::invalid_argument("train: empty dataset");
    if (train_ds.t != cfg.t || train_ds.layout.node_count != cfg.layout.node_count)
        throw std::invalid_argument("train: dataset does not match model config");

    std::filesystem::create_directories(out_dir);
    const int threads = resolve_threads(tc.threads);

    // stratified validation split
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < train_ds.records.size(); ++i)
        by_class[train_ds.records[i].label].push_back(static_cast<int>(i));
    std::vector<int> train_idx, val_idx;
    for (auto& [label, idxs] : by_class) {
        Rng rng(substream(tc.seed, "valsplit", static_cast<std::uint64_t>(label)));
        for (std::size_t i = idxs.size(); i-- > 1;) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(idxs[i], idxs[j]);
        }
        const int n_val = static_cast<int>(tc.val_fraction * static_cast<double>(idxs.size()));
        for (std::size_t i = 0; i < idxs.size(); ++i)
            (static_cast<int>(i) < n_val && idxs.size() > 1 ? val_idx : train_idx)
                .push_back(idxs[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    ModelParams params = model_init(cfg, substream(tc.seed, "init"));
    const AnatomicalGraph graph = build_graph(cfg.layout);

    std::vector<Tensor*> plist;
    for_each_param(params, cfg, [&](const std::string&, Tensor& t) { plist.push_back(&t); });
    AdamState opt;

    const long steps_per_epoch =
        (static_cast<long>(train_idx.size()) + tc.batch - 1) / tc.batch;
    const long total_steps = steps_per_epoch * tc.epochs;
    const long warmup_steps = steps_per_epoch * tc.warmup_epochs;

    TrainResult result;
    result.metrics_path = out_dir + "/metrics.jsonl";
    result.checkpoint_path = out_dir + "/checkpoint.phck";
    std::ofstream metrics(result.metrics_path, std::ios::binary);
    if (!metrics) throw std::runtime_error("train: cannot open " + result.metrics_path);

    DatasetFile val_view;  // shallow copy of the validation records
    val_view.layout = train_ds.layout;
    val_view.t = train_ds.t;
    val_view.k = train_ds.k;
    val_view.has_phon = train_ds.has_phon;
    val_view.inventory = train_ds.inventory;
    for (int i : val_idx) val_view.records.push_back(train_ds.records[static_cast<std::size_t>(i)]);

    long global_step = 0;
    const int nodes = cfg.layout.node_count;
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order = train_idx;
        Rng shuffle_rng(substream(tc.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i-- > 1;) {
            const std::size_t j =
                static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }

        double ep_loss = 0, ep_ce = 0, ep_ortho = 0, ep_div = 0;
        long ep_correct = 0, ep_samples = 0;

        for (long b = 0; b < steps_per_epoch; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b) * tc.batch;
            const std::size_t hi = std::min(order.size(), lo + tc.batch);
            const int bsz = static_cast<int>(hi - lo);
            const double inv_b = 1.0 / bsz;
            const std::size_t grain =
                (static_cast<std::size_t>(bsz) + kGradChunks - 1) / kGradChunks;
            const int n_chunks = static_cast<int>((bsz + grain - 1) / grain);

            std::vector<ChunkAccum> chunks(static_cast<std::size_t>(n_chunks));
            parallel_for(static_cast<std::size_t>(n_chunks), threads, [&](std::size_t c) {
                ChunkAccum& acc = chunks[c];
                for (Tensor* p : plist) acc.grads.emplace_back(p->shape());
                const std::size_t s0 = lo + c * grain;
                const std::size_t s1 = std::min(hi, s0 + grain);
                for (std::size_t s = s0; s < s1; ++s) {
                    const DatasetRecord& rec =
                        train_ds.records[static_cast<std::size_t>(order[s])];
                    Tensor coords = rec.coords;
                    if (tc.augment) {
                        Rng arng(substream(tc.seed, "augment",
                                           static_cast<std::uint64_t>(epoch),
                                           static_cast<std::uint64_t>(order[s])));
                        coords = augment(coords, arng);
                    }
                    Tape tape(true);
                    const VarId xv =
                        tape.constant(coords.reshaped({cfg.t * nodes, 3}));
                    const ModelVars vars = model_register(tape, params, cfg);
                    Rng drng(substream(tc.seed, "dropout", static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(order[s])));
                    const ForwardTapeOut fwd =
                        model_forward_tape(tape, xv, vars, cfg, graph, Mode::Train, &drng);
                    const VarId loss = model_loss_tape(tape, fwd, rec.label, vars, cfg);
                    tape.backward(loss);

                    acc.loss += tape.value(loss).item();
                    const double ce =
                        tape.value(tape.cross_entropy_smoothed(fwd.logits, rec.label,
                                                               cfg.label_smoothing))
                            .item();
                    acc.ce += ce;
                    if (!cfg.without_pdm) {
                        Tensor pooled({kNumComponents, cfg.dc});
                        for (int i = 0; i < kNumComponents; ++i)
                            for (int j = 0; j < cfg.dc; ++j)
                                pooled.at(i, j) =
                                    tape.value(fwd.pooled[static_cast<std::size_t>(i)])
                                        [static_cast<std::size_t>(j)];
                        acc.ortho += orthogonality_loss(pooled);
                        double dv = 0.0;
                        for (int i = 0; i < kNumComponents; ++i)
                            dv += diversity_loss(params.banks.component[static_cast<std::size_t>(i)]);
                        acc.div += dv / kNumComponents;
                    }
                    const Tensor& logits = tape.value(fwd.logits);
                    int arg = 0;
                    for (int i = 1; i < logits.dim(0); ++i)
                        if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(arg)]) arg = i;
                    if (arg == rec.label) acc.correct += 1;
                    acc.samples += 1;
                    for (std::size_t i = 0; i < plist.size(); ++i) {
                        const Tensor& g = tape.grad(vars.ordered[i]);
                        Tensor& dst = acc.grads[i];
                        for (std::size_t j = 0; j < g.size(); ++j) dst[j] += inv_b * g[j];
                    }
                }
            });

            std::vector<Tensor> grads;
            for (Tensor* p : plist) grads.emplace_back(p->shape());
            double batch_loss = 0.0;
            for (const ChunkAccum& acc : chunks) {  // fixed chunk order
                for (std::size_t i = 0; i < grads.size(); ++i)
                    for (std::size_t j = 0; j < grads[i].size(); ++j)
                        grads[i][j] += acc.grads[i][j];
                batch_loss += acc.loss;
                ep_loss += acc.loss;
                ep_ce += acc.ce;
                ep_ortho += acc.ortho;
                ep_div += acc.div;
                ep_correct += acc.correct;
                ep_samples += acc.samples;
            }
            batch_loss *= inv_b;
            if (!std::isfinite(batch_loss)) {
                json dump;
                dump["epoch"] = epoch;
                dump["batch"] = b;
                dump["sample_indices"] = std::vector<int>(order.begin() + static_cast<long>(lo),
                                                          order.begin() + static_cast<long>(hi));
                std::ofstream dmp(out_dir + "/nan_dump.json", std::ios::binary);
                dmp << dump.dump(2) << '\n';
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(b) +
                                         " (diagnostic in nan_dump.json)");
            }

            const double lr = lr_at(global_step + 1, total_steps, warmup_steps, tc.lr);
            adamw_step(plist, grads, opt, lr, tc.weight_decay);
            if (!cfg.without_pdm)
                for (int i = 0; i < kNumComponents; ++i)
                    normalize_rows(params.banks.component[static_cast<std::size_t>(i)]);
            ++global_step;
        }

        json line;
        line["epoch"] = epoch;
        line["lr"] = lr_at(global_step, total_steps, warmup_steps, tc.lr);
        line["loss"] = ep_loss / ep_samples;
        line["ce"] = ep_ce / ep_samples;
        line["ortho"] = ep_ortho / ep_samples;
        line["div"] = ep_div / ep_samples;
        line["train_acc"] = static_cast<double>(ep_correct) / ep_samples;
        if (!val_view.records.empty()) {
            const EvalReport val = evaluate_dataset(params, cfg, val_view, threads);
            line["val_loss"] = val.mean_loss;
            line["val_acc"] = val.top1;
            result.final_val_acc = val.top1;
        }
        const std::string text = line.dump();
        metrics << text << '\n';
        metrics.flush();
        result.metric_lines.push_back(text);
        if (epoch == 1) result.first_ortho = ep_ortho / ep_samples;
        result.last_ortho = ep_ortho / ep_samples;

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "epoch " << epoch << "/" << tc.epochs << "  loss "
                  << ep_loss / ep_samples << "  acc "
                  << static_cast<double>(ep_correct) / ep_samples << "  (" << secs << "s)\n";
    }

    save_checkpoint(result.checkpoint_path, params, cfg);
    return result;
}

}  // namespace phonssm
