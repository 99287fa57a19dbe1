#include "trilite/trainer.hpp"

#include <charconv>

#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "trilite/eval.hpp"
#include "trilite/optim.hpp"
#include "trilite/pipeline.hpp"
#include "trilite/rng.hpp"

namespace trilite {

std::string_view to_string(ValidationMetric metric) {
    switch (metric) {
    case ValidationMetric::gt_loc: return "gt_loc";
    case ValidationMetric::pxap: return "pxap";
    case ValidationMetric::total_loss: return "total_loss";
    }
    return "?";
}

ValidationMetric parse_validation_metric(std::string_view text) {
    if (text == "gt_loc") return ValidationMetric::gt_loc;
    if (text == "pxap") return ValidationMetric::pxap;
    if (text == "total_loss") return ValidationMetric::total_loss;
    throw ConfigError("unknown validation metric '" + std::string(text) + "'");
}

bool higher_is_better(ValidationMetric metric) { return metric != ValidationMetric::total_loss; }

ValidationMetric default_validation_metric(const DatasetHeader& header) {
    if (header.has_bbox) return ValidationMetric::gt_loc;
    if (header.has_mask) return ValidationMetric::pxap;
    return ValidationMetric::total_loss;
}

void TrainConfig::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (!(lr_multiplier >= 1.0)) throw ConfigError("lr_multiplier must be at least 1");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (kernel_size != 1 && kernel_size != 3) throw ConfigError("kernel size must be 1 or 3");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
}

std::string format_epoch(const EpochRecord& r, ValidationMetric metric) {
    return fmt::format("epoch={} l_fg={:.17g} l_bg={:.17g} l_cls={:.17g} total={:.17g} val_metric={} val={:.17g}",
                       r.epoch, r.loss.l_fg, r.loss.l_bg, r.loss.l_cls, r.loss.total, to_string(metric), r.val_metric);
}

void write_history(std::ostream& out, const History& history) {
    for (const auto& r : history.epochs) out << format_epoch(r, history.metric) << '\n';
}

History read_history(std::istream& in) {
    History h;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::map<std::string, std::string> kv;
        std::istringstream fields(line);
        std::string field;
        while (fields >> field) {
            const auto eq = field.find('=');
            if (eq == std::string::npos) throw DataError("history: malformed field '" + field + "'");
            kv[field.substr(0, eq)] = field.substr(eq + 1);
        }
        auto get = [&](const char* key) -> const std::string& {
            const auto it = kv.find(key);
            if (it == kv.end()) throw DataError(std::string("history: missing key ") + key);
            return it->second;
        };
        auto number = [&]<typename T>(const char* key, T& out) {
            const std::string& text = get(key);
            const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
            if (ec != std::errc{} || end != text.data() + text.size())
                throw DataError(std::string("history: bad value for ") + key + ": '" + text + "'");
        };
        EpochRecord r;
        number("epoch", r.epoch);
        number("l_fg", r.loss.l_fg);
        number("l_bg", r.loss.l_bg);
        number("l_cls", r.loss.l_cls);
        number("total", r.loss.total);
        h.metric = parse_validation_metric(get("val_metric"));
        number("val", r.val_metric);
        h.epochs.push_back(r);
    }
    return h;
}

StopDecision early_stop_check(std::span<const double> metrics, std::size_t patience, bool higher) {
    if (metrics.empty()) return StopDecision::proceed;
    std::size_t best = 0;
    for (std::size_t i = 1; i < metrics.size(); ++i)
        if (higher ? metrics[i] > metrics[best] : metrics[i] < metrics[best]) best = i;
    return metrics.size() - 1 - best > patience ? StopDecision::stop : StopDecision::proceed;
}

double validation_score(ValidationMetric metric, const HeadParams& params, const Dataset& val,
                        const TrainConfig& config) {
    switch (metric) {
    case ValidationMetric::gt_loc: {
        const auto records = predict_records(params, val, config.tau);
        return loc_accuracy(records, LocMode::gt_known, BoxMode::largest);
    }
    case ValidationMetric::pxap: return pxap(predict_records(params, val, config.tau));
    case ValidationMetric::total_loss: {
        const LossConfig lc{config.alpha, config.adv_enabled};
        double sum = 0.0;
        for (std::size_t first = 0; first < val.size(); first += config.batch_size) {
            std::vector<std::size_t> idx(std::min(config.batch_size, val.size() - first));
            std::iota(idx.begin(), idx.end(), first);
            sum += evaluate_loss(make_batch(val, idx), params, lc).total * static_cast<double>(idx.size());
        }
        return sum / static_cast<double>(val.size());
    }
    }
    return 0.0;
}

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const TrainHooks& hooks) {
    config.validate();
    if (train_set.size() == 0) throw ConfigError("training set is empty");
    if (val_set.size() == 0 && !hooks.validate) throw ConfigError("validation set is empty");
    const auto& th = train_set.header;
    const auto& vh = val_set.header;
    if (val_set.size() && (th.feature_dim != vh.feature_dim || th.token_dim != vh.token_dim ||
                           th.grid_w != vh.grid_w || th.grid_h != vh.grid_h || th.classes != vh.classes))
        throw ConfigError("training and validation datasets have different shapes");

    const HeadConfig hc{th.feature_dim, th.token_dim, th.classes, config.kernel_size, config.head_mode};
    const LossConfig lc{config.alpha, config.adv_enabled};
    const auto metric = config.validation_metric.value_or(default_validation_metric(vh));
    if (metric == ValidationMetric::gt_loc && !hooks.validate && !vh.has_bbox)
        throw DataError("validation metric gt_loc needs box annotations in the validation split");
    if (metric == ValidationMetric::pxap && !hooks.validate && !vh.has_mask)
        throw DataError("validation metric pxap needs mask annotations in the validation split");

    TrainResult result{HeadParams::initialized(hc, config.seed), History{metric, {}}, 0, false};
    HeadParams params = result.best;
    AdamState adam = AdamState::for_params(params);
    const double lr_head = config.base_lr;
    const double lr_cls = config.base_lr * config.lr_multiplier;
    std::vector<double> metrics;
    const bool higher = higher_is_better(metric);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(config.seed, epoch);
        shuffle_rng.shuffle(order.begin(), order.end());

        EpochRecord record;
        record.epoch = epoch;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, order.size() - first);
            const auto batch = make_batch(train_set, std::span(order).subspan(first, n));
            LossResult step;
            try {
                step = total_loss(batch, params, lc);
                if (!std::isfinite(step.losses.total) || step.losses.total > config.divergence_limit)
                    throw TrainingAborted(fmt::format("loss diverged at epoch {} (total={})", epoch, step.losses.total),
                                          result.history);
                adam_step(params, step.grads, adam, lr_head, lr_cls, config.weight_decay);
            } catch (const NumericError& e) {
                throw TrainingAborted(fmt::format("training aborted at epoch {}: {}", epoch, e.what()), result.history);
            }
            const double w = static_cast<double>(n);
            record.loss.l_fg += step.losses.l_fg * w;
            record.loss.l_bg += step.losses.l_bg * w;
            record.loss.l_cls += step.losses.l_cls * w;
            record.loss.total += step.losses.total * w;
        }
        const double inv = 1.0 / static_cast<double>(order.size());
        record.loss.l_fg *= inv;
        record.loss.l_bg *= inv;
        record.loss.l_cls *= inv;
        record.loss.total *= inv;
        record.loss.alpha = config.adv_enabled ? config.alpha : 0.0;

        record.val_metric = hooks.validate ? hooks.validate(params) : validation_score(metric, params, val_set, config);
        result.history.epochs.push_back(record);
        metrics.push_back(record.val_metric);
        if (hooks.on_epoch) hooks.on_epoch(record);

        const bool improved = result.best_epoch == 0 || (higher ? record.val_metric > metrics[result.best_epoch - 1]
                                                                : record.val_metric < metrics[result.best_epoch - 1]);
        if (improved) {
            result.best = params;
            result.best_epoch = epoch;
        }
        if (early_stop_check(metrics, config.patience, higher) == StopDecision::stop) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

} // namespace trilite
