#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npc/common.hpp"

namespace npc {

// One evaluation point: after `epoch` of training `task`, the accuracy on
// `eval_task` plus the running average over all tasks seen so far.
struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string strategy;
  int task = 0;       // 1-based position in the task sequence
  int epoch = 0;      // 1-based within the task
  int eval_task = 0;  // 1-based
  double accuracy = 0.0;
  double avg_accuracy = 0.0;
  std::int64_t wall_ms = 0;
};

// strategy x task table with standard errors over runs; eval_task 0 keeps
// the across-task average row.
struct SummaryRow {
  std::string strategy;
  int eval_task = 0;
  double mean_accuracy = 0.0;
  double std_error = 0.0;
  int runs = 0;
};

struct ActivationChangeRow {
  i64 neuron = 0;
  i64 sample = 0;
  double importance = 0.0;
  double before = 0.0;
  double after = 0.0;
  double abs_change = 0.0;
};

extern const char* const kMetricsHeader;
extern const char* const kSummaryHeader;
extern const char* const kActivationHeader;

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
std::string format_metrics_row(const MetricsRow& row);

// Final-epoch-of-final-task rows per (strategy, seed) reduced to mean and
// standard error of the per-task accuracies and their average.
std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path);

void write_activation_csv(const std::vector<ActivationChangeRow>& rows, const std::string& path);

// Optional per-neuron importance dump: neuron_id,layer,C.
void write_importance_csv(const std::vector<double>& c, const std::vector<int>& layer_of_neuron,
                          const std::string& path);

}  // namespace npc
