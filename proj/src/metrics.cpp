#include "cloze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "cloze/tensor.hpp"
#include "json.hpp"

namespace cloze {

using nlohmann::json;

std::string MetricRecord::to_json() const {
  json j = {{"step", step}, {"epoch", epoch}, {"split", split},
            {"lr", lr},     {"loss_ce", loss_ce}, {"loss_lst", loss_lst}};
  if (cloze_acc) j["cloze_acc"] = *cloze_acc;
  if (cer) j["cer"] = *cer;
  return j.dump();
}

MetricRecord MetricRecord::from_json(const std::string& line) {
  static const std::set<std::string> known = {"step",     "epoch",    "split",     "lr",
                                              "loss_ce",  "loss_lst", "cloze_acc", "cer"};
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("metrics: malformed JSON line: ") + e.what());
  }
  if (!j.is_object()) throw ContractError("metrics: record is not an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ContractError("metrics: unknown field '" + it.key() + "'");
  MetricRecord r;
  try {
    r.step = j.at("step").get<std::uint64_t>();
    r.epoch = j.at("epoch").get<std::uint64_t>();
    r.split = j.at("split").get<std::string>();
    r.lr = j.at("lr").get<double>();
    r.loss_ce = j.at("loss_ce").get<double>();
    r.loss_lst = j.at("loss_lst").get<double>();
    if (j.contains("cloze_acc")) r.cloze_acc = j["cloze_acc"].get<double>();
    if (j.contains("cer")) r.cer = j["cer"].get<double>();
  } catch (const json::exception& e) {
    throw ContractError(std::string("metrics: bad record: ") + e.what());
  }
  return r;
}

void MetricsSink::emit(const MetricRecord& r) {
  records_.push_back(r);
  if (out_) *out_ << r.to_json() << '\n' << std::flush;
}

std::vector<MetricRecord> parse_metrics(const std::string& jsonl, const std::string& source) {
  std::vector<MetricRecord> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(MetricRecord::from_json(line));
    } catch (const ContractError& e) {
      throw ContractError(source + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

namespace {

enum class StreamKind { cloze, cer };

StreamKind classify(const RunStream& run) {
  if (run.records.empty()) throw ContractError("report: run '" + run.run + "' has no records");
  bool acc = false, cer = false;
  for (const auto& r : run.records) {
    acc |= r.cloze_acc.has_value();
    cer |= r.cer.has_value();
  }
  if (acc && cer)
    throw ContractError("report: run '" + run.run + "' mixes cloze accuracy and CER records");
  if (!acc && !cer)
    throw ContractError("report: run '" + run.run + "' carries neither cloze accuracy nor CER");
  return acc ? StreamKind::cloze : StreamKind::cer;
}

/// Last record of the "final" split, else the last validation record with the metric.
const MetricRecord& headline(const RunStream& run, StreamKind kind) {
  const MetricRecord* best = nullptr;
  for (const auto& r : run.records) {
    const bool has = kind == StreamKind::cloze ? r.cloze_acc.has_value() : r.cer.has_value();
    if (!has) continue;
    if (r.split == "final" || !best || best->split != "final") best = &r;
  }
  return *best;
}

struct Summary {
  double mean = 0, min = 0, max = 0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s{0.0, *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())};
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  return s;
}

void put(std::ostream& os, const Summary& s) { os << ',' << s.mean << ',' << s.min << ',' << s.max; }

}  // namespace

ReportTables emit_report(const std::vector<RunStream>& runs) {
  if (runs.empty()) throw ContractError("report: no runs");
  std::set<std::string> names;
  std::map<std::pair<std::string, std::string>, std::vector<double>> acc;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> cers;
  for (const auto& run : runs) {
    if (!names.insert(run.run).second) throw ContractError("report: duplicate run '" + run.run + "'");
    const StreamKind kind = classify(run);
    const MetricRecord& h = headline(run, kind);
    if (kind == StreamKind::cloze) {
      acc[{run.group, run.corpus}].push_back(*h.cloze_acc);
    } else {
      auto& [c, ce] = cers[run.group];
      c.push_back(*h.cer);
      ce.push_back(h.loss_ce);
    }
  }

  ReportTables t;
  std::ostringstream a, c, curves;
  for (auto* os : {&a, &c, &curves}) *os << std::setprecision(10);
  a << "model,corpus,runs,acc_mean,acc_min,acc_max\n";
  for (const auto& [key, v] : acc) {
    a << key.first << ',' << key.second << ',' << v.size();
    put(a, summarize(v));
    a << '\n';
  }
  c << "mode,runs,cer_mean,cer_min,cer_max,val_ce_mean,val_ce_min,val_ce_max\n";
  for (const auto& [group, v] : cers) {
    c << group << ',' << v.first.size();
    put(c, summarize(v.first));
    put(c, summarize(v.second));
    c << '\n';
  }
  curves << "step,run,val_ce\n";
  for (const auto& run : runs)
    for (const auto& r : run.records)
      if (r.split == "val") curves << r.step << ',' << run.run << ',' << r.loss_ce << '\n';
  t.cloze_table = a.str();
  t.cer_table = c.str();
  t.curves = curves.str();
  return t;
}

}  // namespace cloze
