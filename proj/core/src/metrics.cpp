#include "npc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace npc {

const char* const kMetricsHeader =
    "run_id,seed,strategy,task,epoch,eval_task,accuracy,avg_accuracy,wall_ms";
const char* const kSummaryHeader = "strategy,eval_task,mean_accuracy,std_error,runs";
const char* const kActivationHeader =
    "neuron_id,sample_id,importance,activation_before,activation_after,abs_change";

namespace {

// %.17g round-trips doubles exactly through the CSV.
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
  if (!out) throw DataError("cannot write " + path);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.seed << ',' << r.strategy << ',' << r.task << ',' << r.epoch << ','
     << r.eval_task << ',' << fmt_double(r.accuracy) << ',' << fmt_double(r.avg_accuracy) << ','
     << r.wall_ms;
  return os.str();
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + " is empty");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != 9) throw DataError(path + ": malformed row '" + line + "'");
    MetricsRow r;
    r.run_id = f[0];
    r.seed = std::stoull(f[1]);
    r.strategy = f[2];
    r.task = std::stoi(f[3]);
    r.epoch = std::stoi(f[4]);
    r.eval_task = std::stoi(f[5]);
    r.accuracy = std::stod(f[6]);
    r.avg_accuracy = std::stod(f[7]);
    r.wall_ms = std::stoll(f[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  // Keep only each run's last evaluation sweep: max (task, epoch) per run.
  std::map<std::pair<std::string, std::uint64_t>, std::pair<int, int>> last;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.strategy, r.seed);
    auto cur = std::make_pair(r.task, r.epoch);
    auto it = last.find(key);
    if (it == last.end() || cur > it->second) last[key] = cur;
  }
  // strategy -> eval_task -> accuracies over seeds (0 = average row)
  std::map<std::string, std::map<int, std::vector<double>>> acc;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.strategy, r.seed);
    if (std::make_pair(r.task, r.epoch) != last[key]) continue;
    acc[r.strategy][r.eval_task].push_back(r.accuracy);
    if (r.eval_task == r.task)  // one avg sample per run, taken at the final row
      acc[r.strategy][0].push_back(r.avg_accuracy);
  }
  std::vector<SummaryRow> out;
  for (const auto& [strategy, tasks] : acc) {
    for (const auto& [eval_task, values] : tasks) {
      SummaryRow s;
      s.strategy = strategy;
      s.eval_task = eval_task;
      s.runs = static_cast<int>(values.size());
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= values.size();
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      s.mean_accuracy = mean;
      s.std_error = values.size() > 1
                        ? std::sqrt(var / (values.size() - 1)) / std::sqrt(double(values.size()))
                        : 0.0;
      out.push_back(s);
    }
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  auto out = open_out(path);
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << r.strategy << ',';
    if (r.eval_task == 0)
      out << "average";
    else
      out << r.eval_task;
    out << ',' << fmt_double(r.mean_accuracy) << ',' << fmt_double(r.std_error) << ',' << r.runs
        << '\n';
  }
}

void write_activation_csv(const std::vector<ActivationChangeRow>& rows,
                          const std::string& path) {
  auto out = open_out(path);
  out << kActivationHeader << '\n';
  for (const auto& r : rows) {
    out << r.neuron << ',' << r.sample << ',' << fmt_double(r.importance) << ','
        << fmt_double(r.before) << ',' << fmt_double(r.after) << ',' << fmt_double(r.abs_change)
        << '\n';
  }
}

void write_importance_csv(const std::vector<double>& c, const std::vector<int>& layer_of_neuron,
                          const std::string& path) {
  if (c.size() != layer_of_neuron.size()) throw ShapeError("importance dump size mismatch");
  auto out = open_out(path);
  out << "neuron_id,layer,C\n";
  for (std::size_t i = 0; i < c.size(); ++i)
    out << i << ',' << layer_of_neuron[i] << ',' << fmt_double(c[i]) << '\n';
}

}  // namespace npc
