#include "flowids/cli/config.hpp"

#include <cstdlib>
#include <functional>

#include "flowids/errors.hpp"
#include "flowids/util.hpp"

namespace flowids::cli {

namespace {

struct KeySpec {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  long long v;
  if (!util::try_parse_int(value, v) || v < 0) {
    throw ConfigError("config key '" + key +
                      "' wants a non-negative integer, got '" + value + "'");
  }
  return static_cast<std::uint64_t>(v);
}

double parse_f64(const std::string& key, const std::string& value) {
  double v;
  if (!util::try_parse_double(value, v)) {
    throw ConfigError("config key '" + key + "' wants a number, got '" +
                      value + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = util::to_lower(util::trim(value));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' wants a boolean, got '" + value +
                    "'");
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"task",
       [](RunConfig& c, const std::string& v) {
         c.task = task_mode_from_string(util::trim(v));
       },
       [](const RunConfig& c) { return to_string(c.task); }},
      {"input",
       [](RunConfig& c, const std::string& v) { c.input = util::trim(v); },
       [](const RunConfig& c) { return c.input; }},
      {"work_dir",
       [](RunConfig& c, const std::string& v) { c.work_dir = util::trim(v); },
       [](const RunConfig& c) { return c.work_dir; }},
      {"seed",
       [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"label_column",
       [](RunConfig& c, const std::string& v) {
         c.label_column = util::trim(v);
       },
       [](const RunConfig& c) { return c.label_column; }},
      {"pearson_threshold",
       [](RunConfig& c, const std::string& v) {
         c.pearson_threshold = parse_f64("pearson_threshold", v);
       },
       [](const RunConfig& c) {
         return util::format_double(c.pearson_threshold);
       }},
      {"pearson_signed",
       [](RunConfig& c, const std::string& v) {
         c.pearson_signed = parse_bool("pearson_signed", v);
       },
       [](const RunConfig& c) { return fmt_bool(c.pearson_signed); }},
      {"val_fraction",
       [](RunConfig& c, const std::string& v) {
         c.val_fraction = parse_f64("val_fraction", v);
       },
       [](const RunConfig& c) { return util::format_double(c.val_fraction); }},
      {"gan.steps",
       [](RunConfig& c, const std::string& v) {
         c.gan_steps = parse_u64("gan.steps", v);
       },
       [](const RunConfig& c) { return std::to_string(c.gan_steps); }},
      {"gan.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.gan_batch_size = parse_u64("gan.batch_size", v);
       },
       [](const RunConfig& c) { return std::to_string(c.gan_batch_size); }},
      {"gan.gen_lr",
       [](RunConfig& c, const std::string& v) {
         c.gan_gen_lr = parse_f64("gan.gen_lr", v);
       },
       [](const RunConfig& c) { return util::format_double(c.gan_gen_lr); }},
      {"gan.disc_lr",
       [](RunConfig& c, const std::string& v) {
         c.gan_disc_lr = parse_f64("gan.disc_lr", v);
       },
       [](const RunConfig& c) { return util::format_double(c.gan_disc_lr); }},
      {"gan.gen_beta1",
       [](RunConfig& c, const std::string& v) {
         c.gan_gen_beta1 = parse_f64("gan.gen_beta1", v);
       },
       [](const RunConfig& c) { return util::format_double(c.gan_gen_beta1); }},
      {"gan.disc_beta1",
       [](RunConfig& c, const std::string& v) {
         c.gan_disc_beta1 = parse_f64("gan.disc_beta1", v);
       },
       [](const RunConfig& c) {
         return util::format_double(c.gan_disc_beta1);
       }},
      {"gan.output_activation",
       [](RunConfig& c, const std::string& v) {
         const std::string act = util::to_lower(util::trim(v));
         if (act != "relu" && act != "linear") {
           throw ConfigError(
               "gan.output_activation must be relu or linear, got '" + v + "'");
         }
         c.gan_output_activation = act;
       },
       [](const RunConfig& c) { return c.gan_output_activation; }},
      {"augment.strategy",
       [](RunConfig& c, const std::string& v) {
         const std::string s = util::to_lower(util::trim(v));
         if (s != "balance" && s != "none") {
           throw ConfigError("augment.strategy must be balance or none, got '" +
                             v + "'");
         }
         c.augment_strategy = s;
       },
       [](const RunConfig& c) { return c.augment_strategy; }},
      {"model.extra_branches",
       [](RunConfig& c, const std::string& v) {
         c.extra_branches = util::trim(v);
         c.parsed_extra_branches();  // validates
       },
       [](const RunConfig& c) { return c.extra_branches; }},
      {"train.epochs",
       [](RunConfig& c, const std::string& v) {
         c.epochs = parse_u64("train.epochs", v);
       },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.batch_size = parse_u64("train.batch_size", v);
         if (c.batch_size < 1) {
           throw ConfigError("train.batch_size must be at least 1");
         }
       },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},
      {"train.lr",
       [](RunConfig& c, const std::string& v) {
         c.learning_rate = parse_f64("train.lr", v);
       },
       [](const RunConfig& c) { return util::format_double(c.learning_rate); }},
      {"train.shuffle",
       [](RunConfig& c, const std::string& v) {
         c.shuffle_per_epoch = parse_bool("train.shuffle", v);
       },
       [](const RunConfig& c) { return fmt_bool(c.shuffle_per_epoch); }},
      {"lime.n_samples",
       [](RunConfig& c, const std::string& v) {
         c.lime_samples = parse_u64("lime.n_samples", v);
       },
       [](const RunConfig& c) { return std::to_string(c.lime_samples); }},
      {"lime.top_k",
       [](RunConfig& c, const std::string& v) {
         c.lime_top_k = parse_u64("lime.top_k", v);
       },
       [](const RunConfig& c) { return std::to_string(c.lime_top_k); }},
      {"lime.kernel_width",
       [](RunConfig& c, const std::string& v) {
         c.lime_kernel_width = parse_f64("lime.kernel_width", v);
       },
       [](const RunConfig& c) {
         return util::format_double(c.lime_kernel_width);
       }},
      {"lime.perturbation_scale",
       [](RunConfig& c, const std::string& v) {
         c.lime_perturbation_scale = parse_f64("lime.perturbation_scale", v);
       },
       [](const RunConfig& c) {
         return util::format_double(c.lime_perturbation_scale);
       }},
      {"lime.ridge",
       [](RunConfig& c, const std::string& v) {
         c.lime_ridge = parse_f64("lime.ridge", v);
       },
       [](const RunConfig& c) { return util::format_double(c.lime_ridge); }},
      {"explain.instance",
       [](RunConfig& c, const std::string& v) {
         c.explain_instance = parse_u64("explain.instance", v);
       },
       [](const RunConfig& c) { return std::to_string(c.explain_instance); }},
      {"explain.class",
       [](RunConfig& c, const std::string& v) {
         long long idx;
         if (!util::try_parse_int(v, idx) || idx < -1) {
           throw ConfigError("explain.class wants -1 (predicted) or a class "
                             "index, got '" + v + "'");
         }
         c.explain_class = static_cast<int>(idx);
       },
       [](const RunConfig& c) { return std::to_string(c.explain_class); }},
  };
  return table;
}

std::string env_name(const std::string& key) {
  std::string out = "FLOWIDS_";
  for (char c : key) {
    out.push_back(c == '.' ? '_'
                           : static_cast<char>(std::toupper(
                                 static_cast<unsigned char>(c))));
  }
  return out;
}

std::string section(const RunConfig& cfg,
                    const std::vector<std::string>& keys) {
  std::string out;
  for (const KeySpec& spec : key_table()) {
    for (const std::string& key : keys) {
      if (key == spec.name) {
        out += spec.name;
        out += " = ";
        out += spec.get(cfg);
        out += "\n";
      }
    }
  }
  return out;
}

std::string chain_hash(const std::string& upstream, const std::string& body) {
  return util::to_hex(util::fnv1a64(upstream + "\n" + body));
}

}  // namespace

std::vector<std::size_t> RunConfig::parsed_extra_branches() const {
  std::vector<std::size_t> kernels;
  const std::string trimmed = util::trim(extra_branches);
  if (trimmed.empty()) return kernels;
  for (const std::string& part : util::split(trimmed, ',')) {
    long long v;
    if (!util::try_parse_int(part, v) || v < 1) {
      throw ConfigError(
          "model.extra_branches wants comma-separated kernel sizes, got '" +
          extra_branches + "'");
    }
    kernels.push_back(static_cast<std::size_t>(v));
  }
  return kernels;
}

void set_config_key(RunConfig& cfg, const std::string& key,
                    const std::string& value) {
  for (const KeySpec& spec : key_table()) {
    if (key == spec.name) {
      spec.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  const std::string text = util::read_text_file(path);
  std::size_t line_no = 0;
  for (const std::string& raw_line : util::split(text, '\n')) {
    ++line_no;
    std::string line = raw_line;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = util::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = util::trim(line.substr(0, eq));
    std::string value = util::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    set_config_key(cfg, key, value);
  }
}

void apply_env_overrides(RunConfig& cfg) {
  for (const KeySpec& spec : key_table()) {
    if (const char* value = std::getenv(env_name(spec.name).c_str())) {
      spec.set(cfg, value);
    }
  }
}

std::string canonical_config(const RunConfig& cfg) {
  std::string out;
  for (const KeySpec& spec : key_table()) {
    out += spec.name;
    out += " = ";
    out += spec.get(cfg);
    out += "\n";
  }
  return out;
}

std::map<std::string, std::string> config_echo(const RunConfig& cfg) {
  std::map<std::string, std::string> echo;
  for (const KeySpec& spec : key_table()) echo[spec.name] = spec.get(cfg);
  return echo;
}

std::string preprocess_hash(const RunConfig& cfg) {
  return chain_hash("", section(cfg, {"task", "input", "label_column",
                                      "pearson_threshold", "pearson_signed",
                                      "val_fraction", "seed"}));
}

std::string gan_hash(const RunConfig& cfg) {
  return chain_hash(
      preprocess_hash(cfg),
      section(cfg, {"gan.steps", "gan.batch_size", "gan.gen_lr", "gan.disc_lr",
                    "gan.gen_beta1", "gan.disc_beta1",
                    "gan.output_activation"}));
}

std::string augment_hash(const RunConfig& cfg) {
  return chain_hash(gan_hash(cfg), section(cfg, {"augment.strategy"}));
}

std::string train_hash(const RunConfig& cfg) {
  return chain_hash(
      augment_hash(cfg),
      section(cfg, {"model.extra_branches", "train.epochs", "train.batch_size",
                    "train.lr", "train.shuffle"}));
}

std::string evaluate_hash(const RunConfig& cfg) { return train_hash(cfg); }

std::string explain_hash(const RunConfig& cfg) {
  return chain_hash(
      train_hash(cfg),
      section(cfg, {"lime.n_samples", "lime.top_k", "lime.kernel_width",
                    "lime.perturbation_scale", "lime.ridge"}));
}

}  // namespace flowids::cli
