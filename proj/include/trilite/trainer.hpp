#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trilite/dataset.hpp"
#include "trilite/error.hpp"
#include "trilite/model.hpp"

namespace trilite {

enum class ValidationMetric { gt_loc, pxap, total_loss };

std::string_view to_string(ValidationMetric metric);
ValidationMetric parse_validation_metric(std::string_view text);
bool higher_is_better(ValidationMetric metric);

// gt_loc when the split has boxes, pxap when it has masks, total_loss otherwise.
ValidationMetric default_validation_metric(const DatasetHeader& header);

struct TrainConfig {
    double base_lr = 5e-5;
    double lr_multiplier = 10.0; // token classifier lr = base_lr * lr_multiplier
    double weight_decay = 0.01;
    double alpha = 1.0;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 30;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    HeadMode head_mode = HeadMode::three_channel;
    bool adv_enabled = true;
    std::optional<ValidationMetric> validation_metric;
    std::size_t kernel_size = 3;
    double tau = 0.5; // binarization threshold for the gt_loc validation metric
    double divergence_limit = 1e6;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    LossBreakdown loss;    // sample-weighted mean over the epoch's batches
    double val_metric = 0.0;
};

struct History {
    ValidationMetric metric = ValidationMetric::gt_loc;
    std::vector<EpochRecord> epochs;
};

// One line per epoch:
//   epoch=3 l_fg=... l_bg=... l_cls=... total=... val_metric=gt_loc val=...
// Floating values use 17 significant digits, so the text round-trips.
std::string format_epoch(const EpochRecord& record, ValidationMetric metric);
void write_history(std::ostream& out, const History& history);
History read_history(std::istream& in);

enum class StopDecision { proceed, stop };

// Stop iff the best value occurred more than `patience` epochs before the
// latest one. Only strict improvements move the best.
StopDecision early_stop_check(std::span<const double> metric_history, std::size_t patience, bool higher_is_better);

struct TrainHooks {
    // Replaces the built-in validation metric when set.
    std::function<double(const HeadParams&)> validate;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    HeadParams best; // parameters after the best validation epoch
    History history;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
};

// Raised on divergence (total loss above the limit or non-finite) or a
// non-finite gradient; carries the history recorded so far.
class TrainingAborted : public Error {
public:
    TrainingAborted(const std::string& what, History history) : Error(what), history_(std::move(history)) {}
    const History& history() const noexcept { return history_; }

private:
    History history_;
};

double validation_score(ValidationMetric metric, const HeadParams& params, const Dataset& val,
                        const TrainConfig& config);

TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                  const TrainHooks& hooks = {});

} // namespace trilite
