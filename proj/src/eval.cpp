#include "twins/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "twins/binary_io.hpp"

namespace twins {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string cell_fingerprint(const GridCell& cell, const nlohmann::json& upstream_config,
                             const FinetuneOptions& options, const std::string& dataset_id) {
  nlohmann::json j = {{"upstream", cell.upstream},
                      {"upstream_config", upstream_config},
                      {"fraction", cell.fraction},
                      {"seed", cell.seed},
                      {"finetune", options.to_json()},
                      {"dataset_id", dataset_id}};
  return io::to_hex(io::fnv1a64(j.dump()));
}

}  // namespace

std::string GridReport::to_csv() const {
  std::ostringstream out;
  out << "upstream,fraction,seed,accuracy,fingerprint,error\n";
  for (const GridCell& c : cells) {
    std::string error = c.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << c.upstream << ',' << format_double(c.fraction) << ',' << c.seed << ','
        << format_double(c.accuracy) << ',' << c.fingerprint << ',' << error << '\n';
  }
  return out.str();
}

GridReport GridReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      line != "upstream,fraction,seed,accuracy,fingerprint,error")
    throw FormatError("grid CSV: missing or unexpected header");
  GridReport report;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 6)
      throw FormatError("grid CSV line " + std::to_string(line_no) + ": expected 6 fields");
    GridCell c;
    c.upstream = fields[0];
    try {
      c.fraction = std::stod(fields[1]);
      c.seed = std::stoull(fields[2]);
      c.accuracy = std::stod(fields[3]);
    } catch (const std::exception&) {
      throw FormatError("grid CSV line " + std::to_string(line_no) + ": bad numeric field");
    }
    c.fingerprint = fields[4];
    c.error = fields[5];
    report.cells.push_back(std::move(c));
  }
  return report;
}

double GridReport::mean_accuracy(const std::string& upstream, double fraction) const {
  double sum = 0.0;
  int count = 0;
  for (const GridCell& c : cells) {
    if (c.upstream != upstream || c.fraction != fraction || !c.error.empty()) continue;
    sum += c.accuracy;
    ++count;
  }
  return count > 0 ? sum / count : std::nan("");
}

std::string GridReport::to_markdown() const {
  std::vector<std::string> upstreams;
  std::set<double> fractions;
  for (const GridCell& c : cells) {
    if (std::find(upstreams.begin(), upstreams.end(), c.upstream) == upstreams.end())
      upstreams.push_back(c.upstream);
    fractions.insert(c.fraction);
  }
  // Baseline column last, like the reference layout.
  auto base = std::find(upstreams.begin(), upstreams.end(), "baseline");
  if (base != upstreams.end()) {
    upstreams.erase(base);
    upstreams.push_back("baseline");
  }

  std::ostringstream out;
  out << "| labeled fraction |";
  for (const std::string& u : upstreams) out << ' ' << u << " |";
  out << "\n|---|";
  for (size_t i = 0; i < upstreams.size(); ++i) out << "---|";
  out << '\n';
  out.setf(std::ios::fixed);
  out.precision(2);
  for (double f : fractions) {
    out << "| " << f << " |";
    for (const std::string& u : upstreams) {
      const double acc = mean_accuracy(u, f);
      out << ' ';
      if (std::isnan(acc)) {
        out << "n/a";
      } else {
        out << acc;
      }
      out << " |";
    }
    out << '\n';
  }
  return out.str();
}

GridReport run_grid(const GridJob& job, const Dataset& data) {
  if (job.checkpoints.empty() && !job.include_baseline)
    throw InvalidInputError("run_grid: nothing to evaluate");
  if (job.fractions.empty() || job.seeds.empty())
    throw InvalidInputError("run_grid: need at least one fraction and one seed");

  GridReport report;
  auto evaluate = [&](const std::string& label, const nlohmann::json& upstream_config,
                      const ModelParams* encoder, double fraction, uint64_t seed) {
    GridCell cell;
    cell.upstream = label;
    cell.fraction = fraction;
    cell.seed = seed;
    FinetuneOptions options = job.finetune;
    options.fraction = fraction;
    options.seed = seed;
    cell.fingerprint = cell_fingerprint(cell, upstream_config, options, data.manifest.id);
    try {
      const ArchDescriptor& scratch_arch = job.checkpoints.empty()
                                               ? job.baseline_arch
                                               : job.checkpoints[0].checkpoint.params.arch;
      FinetuneResult ft = encoder ? finetune(*encoder, data, options)
                                  : scratch_baseline(scratch_arch, data, options);
      cell.accuracy =
          top1_accuracy(ft.encoder, ft.head_weight, ft.head_bias, data.test);
    } catch (const TwinsError& e) {
      cell.error = e.what();
      cell.accuracy = -1.0;
    }
    report.cells.push_back(std::move(cell));
  };

  for (double fraction : job.fractions) {
    for (uint64_t seed : job.seeds) {
      for (const LabeledCheckpoint& lc : job.checkpoints)
        evaluate(lc.label, lc.checkpoint.config, &lc.checkpoint.params, fraction, seed);
      if (job.include_baseline)
        evaluate("baseline", nlohmann::json{{"kind", "scratch"}}, nullptr, fraction, seed);
    }
  }
  return report;
}

}  // namespace twins
