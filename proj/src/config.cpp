#include "twins/config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace twins {

namespace {

struct TomlValue {
  enum Kind { kInt, kFloat, kBool, kString, kIntArray };
  Kind kind = kInt;
  int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<int64_t> array;
  int line = 0;
};

[[noreturn]] void fail(int line, const std::string& message) {
  throw ConfigError("config line " + std::to_string(line) + ": " + message);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return {};
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// Cuts a trailing comment, respecting double-quoted strings.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

bool parse_int(const std::string& text, int64_t& out) {
  if (text.empty()) return false;
  size_t i = text[0] == '+' || text[0] == '-' ? 1 : 0;
  if (i == text.size()) return false;
  for (size_t k = i; k < text.size(); ++k)
    if (!std::isdigit(static_cast<unsigned char>(text[k]))) return false;
  try {
    out = std::stoll(text);
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

bool parse_float(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) return false;
  return std::isfinite(out);
}

std::string parse_string_literal(const std::string& text, int line) {
  if (text.size() < 2 || text.front() != '"' || text.back() != '"')
    fail(line, "expected a double-quoted string");
  std::string out;
  for (size_t i = 1; i + 1 < text.size(); ++i) {
    char c = text[i];
    if (c == '\\') {
      if (i + 2 >= text.size()) fail(line, "dangling escape in string");
      char e = text[++i];
      switch (e) {
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        default: fail(line, std::string("unsupported escape \\") + e);
      }
    } else if (c == '"') {
      fail(line, "unescaped quote inside string");
    } else {
      out += c;
    }
  }
  return out;
}

TomlValue parse_value(const std::string& raw, int line) {
  TomlValue v;
  v.line = line;
  const std::string text = trim(raw);
  if (text.empty()) fail(line, "missing value");
  if (text.front() == '"') {
    v.kind = TomlValue::kString;
    v.s = parse_string_literal(text, line);
    return v;
  }
  if (text == "true" || text == "false") {
    v.kind = TomlValue::kBool;
    v.b = text == "true";
    return v;
  }
  if (text.front() == '[') {
    if (text.back() != ']') fail(line, "array must open and close on one line");
    v.kind = TomlValue::kIntArray;
    std::string body = text.substr(1, text.size() - 2);
    std::stringstream ss(body);
    std::string part;
    while (std::getline(ss, part, ',')) {
      part = trim(part);
      if (part.empty()) continue;
      int64_t n;
      if (!parse_int(part, n)) fail(line, "array elements must be integers");
      v.array.push_back(n);
    }
    return v;
  }
  if (parse_int(text, v.i)) {
    v.kind = TomlValue::kInt;
    return v;
  }
  if (parse_float(text, v.f)) {
    v.kind = TomlValue::kFloat;
    return v;
  }
  fail(line, "cannot parse value '" + text + "'");
}

using TomlTable = std::map<std::string, TomlValue>;  // "section.key" -> value

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    if (section.empty()) fail(line_no, "key outside any [section]");
    const std::string full = section + "." + key;
    if (table.count(full)) fail(line_no, "duplicate key " + full);
    table[full] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

// Typed getters; each consumes its key so leftovers can be reported.
struct KeyReader {
  TomlTable table;

  bool take(const std::string& key, TomlValue& out) {
    auto it = table.find(key);
    if (it == table.end()) return false;
    out = it->second;
    table.erase(it);
    return true;
  }
  void read_int(const std::string& key, int& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind != TomlValue::kInt) fail(v.line, key + " must be an integer");
    target = static_cast<int>(v.i);
  }
  void read_u64(const std::string& key, uint64_t& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind != TomlValue::kInt || v.i < 0)
      fail(v.line, key + " must be a non-negative integer");
    target = static_cast<uint64_t>(v.i);
  }
  void read_float(const std::string& key, double& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind == TomlValue::kInt) {
      target = static_cast<double>(v.i);
    } else if (v.kind == TomlValue::kFloat) {
      target = v.f;
    } else {
      fail(v.line, key + " must be a number");
    }
  }
  void read_bool(const std::string& key, bool& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind != TomlValue::kBool) fail(v.line, key + " must be true or false");
    target = v.b;
  }
  void read_string(const std::string& key, std::string& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind != TomlValue::kString) fail(v.line, key + " must be a string");
    target = v.s;
  }
  void read_int_array(const std::string& key, std::vector<int64_t>& target) {
    TomlValue v;
    if (!take(key, v)) return;
    if (v.kind != TomlValue::kIntArray) fail(v.line, key + " must be an integer array");
    target = v.array;
  }
};

double op_param(const AugmentationPolicy& p, const std::string& op, const std::string& key) {
  for (const AugOpSpec& o : p.ops)
    if (o.name == op) return o.params.at(key);
  throw ConfigError("policy is missing op " + op);
}

double op_prob(const AugmentationPolicy& p, const std::string& op) {
  for (const AugOpSpec& o : p.ops)
    if (o.name == op) return o.probability;
  throw ConfigError("policy is missing op " + op);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  dsp.validate();
  train.validate();
  finetune.validate();
  if (train.arch.input_bins != dsp.mel_bins ||
      train.arch.input_frames != dsp.frames_per_segment())
    throw ConfigError("model input shape " + std::to_string(train.arch.input_bins) + "x" +
                      std::to_string(train.arch.input_frames) +
                      " does not match the feature shape " + std::to_string(dsp.mel_bins) +
                      "x" + std::to_string(dsp.frames_per_segment()));
}

RunConfig parse_run_config(const std::string& text) {
  KeyReader reader{parse_toml(text)};
  RunConfig c;

  reader.read_int("dsp.sample_rate_hz", c.dsp.sample_rate_hz);
  reader.read_float("dsp.segment_seconds", c.dsp.segment_seconds);
  reader.read_float("dsp.min_segment_fill", c.dsp.min_segment_fill);
  reader.read_int("dsp.window_size", c.dsp.window_size);
  reader.read_int("dsp.hop_size", c.dsp.hop_size);
  reader.read_int("dsp.mel_bins", c.dsp.mel_bins);
  reader.read_float("dsp.fmin_hz", c.dsp.fmin_hz);
  reader.read_float("dsp.fmax_hz", c.dsp.fmax_hz);
  reader.read_float("dsp.log_floor", c.dsp.log_floor);

  // Augmentation: the standard four-op chain with adjustable knobs.
  c.train.policy = AugmentationPolicy::default_policy(42, c.dsp.log_floor);
  auto& ops = c.train.policy.ops;
  reader.read_u64("augment.rng_seed", c.train.policy.rng_seed);
  bool mask_value_set = false;
  {
    TomlValue v;
    if (reader.take("augment.mask_value", v)) {
      if (v.kind == TomlValue::kInt) {
        c.train.policy.mask_value = static_cast<double>(v.i);
      } else if (v.kind == TomlValue::kFloat) {
        c.train.policy.mask_value = v.f;
      } else {
        fail(v.line, "augment.mask_value must be a number");
      }
      mask_value_set = true;
    }
  }
  reader.read_float("augment.time_mask_prob", ops[0].probability);
  reader.read_float("augment.time_mask_max_frames", ops[0].params["max_frames"]);
  reader.read_float("augment.freq_mask_prob", ops[1].probability);
  reader.read_float("augment.freq_mask_max_bins", ops[1].params["max_bins"]);
  reader.read_float("augment.gain_prob", ops[2].probability);
  reader.read_float("augment.gain_lo", ops[2].params["lo"]);
  reader.read_float("augment.gain_hi", ops[2].params["hi"]);
  reader.read_float("augment.noise_prob", ops[3].probability);
  reader.read_float("augment.noise_sigma", ops[3].params["sigma"]);
  if (!mask_value_set) c.train.policy.mask_value = std::log(c.dsp.log_floor);

  std::vector<int64_t> channels = {16, 32, 64};
  int kernel = 3, stride = 2;
  reader.read_int_array("model.conv_channels", channels);
  reader.read_int("model.kernel", kernel);
  reader.read_int("model.stride", stride);
  c.train.arch.convs.clear();
  for (int64_t ch : channels) c.train.arch.convs.push_back({static_cast<int>(ch), kernel, stride});
  reader.read_bool("model.projector", c.train.arch.projector);
  reader.read_int("model.projector_hidden", c.train.arch.projector_hidden);
  reader.read_int("model.latent_dim", c.train.arch.latent_dim);
  c.train.arch.input_bins = c.dsp.mel_bins;
  c.train.arch.input_frames = c.dsp.frames_per_segment();

  std::string variant = "bt", reduction = "sum";
  reader.read_string("objective.variant", variant);
  reader.read_float("objective.lambda", c.train.lambda);
  reader.read_float("objective.eps", c.train.corr.eps);
  reader.read_bool("objective.center", c.train.corr.center);
  reader.read_string("objective.reduction", reduction);
  c.train.variant = variant_from_name(variant);
  c.train.corr.reduction = reduction_from_name(reduction);

  std::string optimizer = "adam";
  reader.read_int("train.epochs", c.train.epochs);
  reader.read_int("train.batch_size", c.train.batch_size);
  reader.read_u64("train.seed", c.train.seed);
  reader.read_string("train.optimizer", optimizer);
  c.train.optimizer.kind = optimizer_from_name(optimizer);
  reader.read_float("train.lr", c.train.optimizer.lr);
  reader.read_float("train.beta1", c.train.optimizer.beta1);
  reader.read_float("train.beta2", c.train.optimizer.beta2);
  reader.read_float("train.adam_eps", c.train.optimizer.eps);
  reader.read_float("train.grad_clip", c.train.optimizer.grad_clip);

  std::string mode = "full", subsample_mode = "independent";
  reader.read_string("eval.mode", mode);
  c.finetune.mode = finetune_mode_from_name(mode);
  reader.read_int("eval.epochs", c.finetune.epochs);
  reader.read_int("eval.batch_size", c.finetune.batch_size);
  reader.read_u64("eval.seed", c.finetune.seed);
  reader.read_float("eval.lr", c.finetune.optimizer.lr);
  reader.read_float("eval.grad_clip", c.finetune.optimizer.grad_clip);
  reader.read_string("eval.subsample", subsample_mode);
  if (subsample_mode == "independent") {
    c.finetune.subsample_mode = SubsampleMode::kIndependent;
  } else if (subsample_mode == "nested") {
    c.finetune.subsample_mode = SubsampleMode::kNested;
  } else {
    throw ConfigError("eval.subsample must be independent or nested");
  }

  if (!reader.table.empty()) {
    const auto& [key, value] = *reader.table.begin();
    fail(value.line, "unknown key " + key);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& c) {
  std::ostringstream out;
  out << "[dsp]\n";
  out << "sample_rate_hz = " << c.dsp.sample_rate_hz << "\n";
  out << "segment_seconds = " << fmt(c.dsp.segment_seconds) << "\n";
  out << "min_segment_fill = " << fmt(c.dsp.min_segment_fill) << "\n";
  out << "window_size = " << c.dsp.window_size << "\n";
  out << "hop_size = " << c.dsp.hop_size << "\n";
  out << "mel_bins = " << c.dsp.mel_bins << "\n";
  out << "fmin_hz = " << fmt(c.dsp.fmin_hz) << "\n";
  out << "fmax_hz = " << fmt(c.dsp.fmax_hz) << "\n";
  out << "log_floor = " << fmt(c.dsp.log_floor) << "\n";
  out << "\n[augment]\n";
  out << "rng_seed = " << c.train.policy.rng_seed << "\n";
  out << "mask_value = " << fmt(c.train.policy.mask_value) << "\n";
  out << "time_mask_prob = " << fmt(op_prob(c.train.policy, "time_mask")) << "\n";
  out << "time_mask_max_frames = "
      << fmt(op_param(c.train.policy, "time_mask", "max_frames")) << "\n";
  out << "freq_mask_prob = " << fmt(op_prob(c.train.policy, "freq_mask")) << "\n";
  out << "freq_mask_max_bins = "
      << fmt(op_param(c.train.policy, "freq_mask", "max_bins")) << "\n";
  out << "gain_prob = " << fmt(op_prob(c.train.policy, "gain")) << "\n";
  out << "gain_lo = " << fmt(op_param(c.train.policy, "gain", "lo")) << "\n";
  out << "gain_hi = " << fmt(op_param(c.train.policy, "gain", "hi")) << "\n";
  out << "noise_prob = " << fmt(op_prob(c.train.policy, "additive_noise")) << "\n";
  out << "noise_sigma = " << fmt(op_param(c.train.policy, "additive_noise", "sigma"))
      << "\n";
  out << "\n[model]\n";
  out << "conv_channels = [";
  for (size_t i = 0; i < c.train.arch.convs.size(); ++i) {
    if (i) out << ", ";
    out << c.train.arch.convs[i].out_channels;
  }
  out << "]\n";
  out << "kernel = " << (c.train.arch.convs.empty() ? 3 : c.train.arch.convs[0].kernel)
      << "\n";
  out << "stride = " << (c.train.arch.convs.empty() ? 2 : c.train.arch.convs[0].stride)
      << "\n";
  out << "projector = " << (c.train.arch.projector ? "true" : "false") << "\n";
  out << "projector_hidden = " << c.train.arch.projector_hidden << "\n";
  out << "latent_dim = " << c.train.arch.latent_dim << "\n";
  out << "\n[objective]\n";
  out << "variant = \"" << variant_name(c.train.variant) << "\"\n";
  out << "lambda = " << fmt(c.train.lambda) << "\n";
  out << "eps = " << fmt(c.train.corr.eps) << "\n";
  out << "center = " << (c.train.corr.center ? "true" : "false") << "\n";
  out << "reduction = \"" << reduction_name(c.train.corr.reduction) << "\"\n";
  out << "\n[train]\n";
  out << "epochs = " << c.train.epochs << "\n";
  out << "batch_size = " << c.train.batch_size << "\n";
  out << "seed = " << c.train.seed << "\n";
  out << "optimizer = \"" << optimizer_name(c.train.optimizer.kind) << "\"\n";
  out << "lr = " << fmt(c.train.optimizer.lr) << "\n";
  out << "beta1 = " << fmt(c.train.optimizer.beta1) << "\n";
  out << "beta2 = " << fmt(c.train.optimizer.beta2) << "\n";
  out << "adam_eps = " << fmt(c.train.optimizer.eps) << "\n";
  out << "grad_clip = " << fmt(c.train.optimizer.grad_clip) << "\n";
  out << "\n[eval]\n";
  out << "mode = \"" << finetune_mode_name(c.finetune.mode) << "\"\n";
  out << "epochs = " << c.finetune.epochs << "\n";
  out << "batch_size = " << c.finetune.batch_size << "\n";
  out << "seed = " << c.finetune.seed << "\n";
  out << "lr = " << fmt(c.finetune.optimizer.lr) << "\n";
  out << "grad_clip = " << fmt(c.finetune.optimizer.grad_clip) << "\n";
  out << "subsample = \""
      << (c.finetune.subsample_mode == SubsampleMode::kNested ? "nested" : "independent")
      << "\"\n";
  return out.str();
}

bool apply_seed_override(RunConfig& config) {
  const char* raw = std::getenv("TWIN_SEED");
  if (!raw || *raw == '\0') return false;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || end == raw || *end != '\0')
    throw ConfigError(std::string("TWIN_SEED is not a valid seed: '") + raw + "'");
  config.train.seed = static_cast<uint64_t>(v);
  return true;
}

}  // namespace twins
