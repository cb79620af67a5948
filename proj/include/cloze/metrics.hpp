#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cloze {

/// One line of the JSON-lines metrics stream.
struct MetricRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string split;  // "train", "val" or "final"
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_lst = 0.0;
  std::optional<double> cloze_acc;
  std::optional<double> cer;

  std::string to_json() const;
  static MetricRecord from_json(const std::string& line);
};

/// Writes records as they arrive; a null stream discards them.
class MetricsSink {
 public:
  explicit MetricsSink(std::ostream* out = nullptr) : out_(out) {}
  void emit(const MetricRecord& r);
  const std::vector<MetricRecord>& records() const { return records_; }

 private:
  std::ostream* out_;
  std::vector<MetricRecord> records_;
};

std::vector<MetricRecord> parse_metrics(const std::string& jsonl, const std::string& source = "");

/// A run's metric stream with the labels it is grouped under.
struct RunStream {
  std::string run;     // unique name
  std::string group;   // model variant or training mode
  std::string corpus;
  std::vector<MetricRecord> records;
};

struct ReportTables {
  std::string cloze_table;  // group, corpus, runs, acc mean/min/max
  std::string cer_table;    // group, runs, cer mean/min/max, ce mean/min/max
  std::string curves;       // step, run, validation CE
};

/// Streams carrying cloze accuracy feed the cloze table, streams carrying CER
/// the CER table. Empty streams and streams mixing both are errors.
ReportTables emit_report(const std::vector<RunStream>& runs);

}  // namespace cloze
