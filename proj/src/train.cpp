#include "dqmil/train.hpp"

#include "dqmil/checkpoint.hpp"
#include "dqmil/errors.hpp"
#include "dqmil/metrics.hpp"
#include "dqmil/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace dqmil {

LossBreakdown loss_from_output(const BagOutput& out, std::size_t label, const LossWeights& w, Variant variant)
{
    LossBreakdown b;
    switch (variant) {
    case Variant::MilOnly:
        b.ce_mil = cross_entropy(out.p_mil, label);
        b.total = b.ce_mil;
        break;
    case Variant::PerceiverOnly:
        b.ce_sa = cross_entropy(out.p_sa, label);
        b.total = b.ce_sa;
        break;
    case Variant::DqCe:
        b.ce_sa = cross_entropy(out.p_sa, label);
        b.ce_mil = cross_entropy(out.p_mil, label);
        b.total = cross_entropy(out.p, label);
        break;
    case Variant::DqSd:
        b.ce_sa = cross_entropy(out.p_sa, label);
        b.ce_mil = cross_entropy(out.p_mil, label);
        b.kl = kl_divergence(out.p_mil, out.p_sa);
        b.hint = hint_loss(out.t_sa, out.t_mil);
        b.total = recompose_total(b, variant, w);
        break;
    }
    return b;
}

namespace {

class CsvLog {
public:
    CsvLog(const std::filesystem::path& path, const char* header) : out_(path)
    {
        if (!out_) {
            throw IoError("cannot write " + path.string());
        }
        out_ << header << '\n';
    }
    void line(const std::string& text)
    {
        out_ << text << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

bool better(const EpochLog& e, const EpochLog& best)
{
    const bool e_auc = std::isfinite(e.val_auc);
    const bool b_auc = std::isfinite(best.val_auc);
    if (e_auc && b_auc && e.val_auc != best.val_auc) {
        return e.val_auc > best.val_auc;
    }
    if (e_auc != b_auc) {
        return e_auc;
    }
    return e.val_loss < best.val_loss;
}

} // namespace

template <typename T>
TrainResult train(DQModel<T>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& config)
{
    config.optim.validate();
    config.loss.validate();
    TrainResult result;
    if (config.epochs == 0) {
        return result;
    }
    if (train_set.bags.empty()) {
        throw EmptyInputError("training set is empty");
    }
    const Variant variant = model.config().variant;
    const bool has_val = val_set != nullptr && !val_set->bags.empty();

    std::vector<SourceEmbeddingSet<T>> bags;
    bags.reserve(train_set.bags.size());
    for (const auto& b : train_set.bags) {
        if (b.label >= model.config().classes) {
            throw LabelError("bag '" + b.id + "' has label " + std::to_string(b.label) + " but the model has " +
                             std::to_string(model.config().classes) + " classes");
        }
        bags.push_back(b.embeddings<T>(train_set.sources));
    }

    std::optional<CsvLog> step_csv;
    std::optional<CsvLog> epoch_csv;
    if (config.out_dir) {
        std::error_code ec;
        std::filesystem::create_directories(*config.out_dir, ec);
        if (ec) {
            throw IoError("cannot create " + config.out_dir->string() + ": " + ec.message());
        }
        step_csv.emplace(*config.out_dir / "train_log.csv", "step,epoch,bag,total,ce_sa,ce_mil,kl,hint");
        epoch_csv.emplace(*config.out_dir / "epochs.csv", "epoch,train_loss,val_auc,val_accuracy,val_loss,best");
    }

    LookaheadRAdam<T> optimizer(model.params(), config.optim);
    Rng order_rng = Rng(config.seed).fork(1);
    std::vector<std::size_t> order(bags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::optional<EpochLog> best;
    std::vector<Tensor<T>> best_values;
    std::size_t since_best = 0;
    char line[256];

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const auto& record = train_set.bags[idx];
            const std::uint64_t step = result.step_count + 1;
            model.params().zero_grad();
            LossResult loss;
            try {
                Graph<T> g;
                const BagForward out = model.forward(g, bags[idx]);
                loss = self_distillation_loss(g, out, record.label, config.loss, variant);
                if (!std::isfinite(loss.parts.total)) {
                    throw NumericError("loss is not finite");
                }
                g.backward(loss.total);
                optimizer.step();
            } catch (const NumericError& e) {
                throw TrainingAbort("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ", bag '" +
                                    record.id + "'): " + e.what());
            } catch (const TrainingAbort& e) {
                throw TrainingAbort("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ", bag '" +
                                    record.id + "'): " + e.what());
            }
            result.step_count = step;
            epoch_loss += loss.parts.total;
            result.steps.push_back({step, epoch, record.id, loss.parts});
            if (step_csv) {
                const auto& p = loss.parts;
                // Round-trip digits of the training precision.
                constexpr int digits = std::numeric_limits<T>::max_digits10;
                std::snprintf(line, sizeof line, "%.*g,%.*g,%.*g,%.*g,%.*g", digits, p.total, digits, p.ce_sa, digits,
                              p.ce_mil, digits, p.kl, digits, p.hint);
                step_csv->line(std::to_string(step) + "," + std::to_string(epoch) + "," + record.id + "," + line);
            }
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(bags.size());
        log.val_auc = std::numeric_limits<double>::quiet_NaN();
        log.val_accuracy = std::numeric_limits<double>::quiet_NaN();
        log.val_loss = std::numeric_limits<double>::quiet_NaN();
        if (has_val) {
            const Evaluation ev = evaluate(model, *val_set, config.eval_workers);
            log.val_accuracy = ev.report.accuracy;
            log.val_auc = ev.report.auc;
            double total = 0.0;
            for (const auto& p : ev.predictions) {
                total += loss_from_output(p.output, p.label, config.loss, variant).total;
            }
            log.val_loss = total / static_cast<double>(ev.predictions.size());
        } else {
            log.val_loss = log.train_loss;
        }

        if (!best || better(log, *best)) {
            log.best = true;
            best = log;
            result.best_epoch = epoch;
            since_best = 0;
            best_values.clear();
            for (const auto& p : model.params()) {
                best_values.push_back(p.value);
            }
            if (config.out_dir) {
                save_checkpoint(model, *config.out_dir / "best.dqml");
            }
        } else {
            ++since_best;
        }
        if (config.out_dir) {
            save_checkpoint(model, *config.out_dir / "last.dqml");
            std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%d", epoch, log.train_loss, log.val_auc,
                          log.val_accuracy, log.val_loss, log.best ? 1 : 0);
            epoch_csv->line(line);
        }
        result.epochs.push_back(log);
        if (config.on_epoch) {
            config.on_epoch(log);
        }
        if (config.patience > 0 && since_best >= config.patience) {
            break;
        }
    }

    if (config.restore_best && has_val && !best_values.empty()) {
        for (std::size_t i = 0; i < best_values.size(); ++i) {
            model.params()[i].value = best_values[i];
        }
    }
    return result;
}

template TrainResult train<float>(DQModel<float>&, const Dataset&, const Dataset*, const TrainConfig&);
template TrainResult train<double>(DQModel<double>&, const Dataset&, const Dataset*, const TrainConfig&);

} // namespace dqmil
