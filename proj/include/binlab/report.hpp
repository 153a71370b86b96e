#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binlab/archive.hpp"
#include "binlab/error.hpp"
#include "binlab/metrics.hpp"

namespace binlab {

struct LossRecord {
  long step = 0;
  int stage = 0;
  std::string loss;
  double value = 0.0;
};

struct LossLogContents {
  std::vector<LossRecord> records;
  std::size_t malformed = 0;  // lines skipped
};

inline LossLogContents parse_loss_log(std::istream& in) {
  LossLogContents out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LossRecord r{j.at("step").get<long>(), j.at("stage").get<int>(), j.at("loss").get<std::string>(),
                   j.at("value").get<double>()};
      out.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception&) {
      ++out.malformed;
    }
  }
  return out;
}

inline LossLogContents parse_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read loss log " + path.string());
  return parse_loss_log(in);
}

/// One "step,value" series per loss name, steps in log order.
inline std::map<std::string, std::string> loss_curves(const LossLogContents& log) {
  std::map<std::string, std::string> out;
  for (const auto& r : log.records) {
    auto [it, fresh] = out.try_emplace(r.loss, "step,value\n");
    it->second += std::to_string(r.step) + ',' + detail::fmt("%.10g", r.value) + '\n';
  }
  return out;
}

/// Per-image rows from a CSV written by metrics_csv.
inline std::vector<ImageMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "image,f,f_ps,psnr,drd")
    throw FormatError(path.string() + ": expected header image,f,f_ps,psnr,drd");
  std::vector<ImageMetrics> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    try {
      rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
    }
  }
  if (rows.empty()) throw FormatError(path.string() + ": no rows");
  return rows;
}

struct MethodMetrics {
  std::string method;
  std::filesystem::path file;
};

/// "NAME=path" names the row explicitly; otherwise the file stem is used.
inline MethodMetrics parse_method_arg(const std::string& arg) {
  if (auto eq = arg.find('='); eq != std::string::npos && eq > 0)
    return {arg.substr(0, eq), arg.substr(eq + 1)};
  return {std::filesystem::path(arg).stem().string(), arg};
}

/// One row per method, mean over that method's images, in argument order.
inline std::vector<ImageMetrics> method_rows(const std::vector<MethodMetrics>& methods) {
  if (methods.empty()) throw ConfigError("report needs at least one metrics file");
  std::vector<ImageMetrics> rows;
  for (const auto& m : methods) {
    ImageMetrics mean = mean_metrics(read_metrics_csv(m.file));
    mean.image = m.method;
    rows.push_back(mean);
  }
  return rows;
}

inline std::string method_csv(const std::vector<ImageMetrics>& rows) {
  std::ostringstream os;
  os << "method,f,f_ps,psnr,drd\n";
  for (const auto& r : rows)
    os << r.image << ',' << detail::fmt("%.6f", r.f_measure) << ',' << detail::fmt("%.6f", r.f_ps) << ','
       << detail::fmt("%.6f", r.psnr) << ',' << detail::fmt("%.6f", r.drd) << '\n';
  return os.str();
}

struct ReportSummary {
  std::size_t records = 0;
  std::size_t malformed = 0;
  std::size_t curves = 0;
  std::string table;
};

/// Writes table.txt, table.csv and curves/<loss>.csv under `out_dir`. A log
/// without records yields no curves and `records == 0`.
inline ReportSummary write_report(const std::filesystem::path& out_dir, const std::vector<std::filesystem::path>& logs,
                                  const std::vector<MethodMetrics>& methods) {
  namespace fs = std::filesystem;
  ReportSummary s;
  const auto rows = method_rows(methods);
  s.table = metrics_table(rows, "Methods");
  fs::create_directories(out_dir / "curves");
  write_atomic(out_dir / "table.txt", s.table);
  write_atomic(out_dir / "table.csv", method_csv(rows));

  LossLogContents all;
  for (const auto& p : logs) {
    auto c = parse_loss_log(p);
    all.malformed += c.malformed;
    // Several logs: prefix curves with the log's stem.
    for (auto& r : c.records) {
      if (logs.size() > 1) r.loss = p.stem().string() + "." + r.loss;
      all.records.push_back(std::move(r));
    }
  }
  s.records = all.records.size();
  s.malformed = all.malformed;
  for (const auto& [name, body] : loss_curves(all)) {
    write_atomic(out_dir / "curves" / (name + ".csv"), body);
    ++s.curves;
  }
  return s;
}

}  // namespace binlab
