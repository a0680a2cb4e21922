#include "run_config.hpp"

#include "cmvae/errors.hpp"

namespace cmvae::cli {

namespace {

std::string flag_of(const std::string& name) {
  std::string flag = "--";
  for (char c : name) flag += c == '_' ? '-' : c;
  return flag;
}

void assign(const Field& f, const io::Json& v) {
  const auto bad = [&] {
    return FormatError("config key '" + f.name + "' has the wrong type: " + v.dump());
  };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) throw bad();
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) throw bad();
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw bad();
          *p = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
          if (!v.is_array()) throw bad();
          p->clear();
          for (const auto& e : v) {
            if (!e.is_string()) throw bad();
            p->push_back(e.get<std::string>());
          }
        } else {
          if (!v.is_number_unsigned()) throw bad();
          *p = v.get<T>();
        }
      },
      f.ref);
}

}  // namespace

Binding& Binding::add(const std::string& name, FieldRef ref, const std::string& help) {
  CLI::Option* opt = std::visit(
      [&](auto* p) -> CLI::Option* {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          return app_->add_flag(flag_of(name), *p, help);
        } else {
          std::string names = flag_of(name);
          if (name == "output") names = "-o," + names;
          CLI::Option* o = app_->add_option(names, *p, help);
          if constexpr (!std::is_same_v<T, std::vector<std::string>>) o->capture_default_str();
          return o;
        }
      },
      ref);
  fields_.push_back({name, ref, help});
  options_[name] = opt;
  return *this;
}

Binding& Binding::common() {
  add("seed", &cfg_.seed, "random seed");
  add("workers", &cfg_.workers, "parallel workers (0 = available parallelism)");
  add("output", &cfg_.output, "output path");
  add("config", &cfg_.config, "JSON config file or run manifest; flags override it");
  add("manifest", &cfg_.manifest, "manifest path (default: run-manifest.json next to the output)");
  return *this;
}

void Binding::apply_config() const {
  if (cfg_.config.empty()) return;
  io::Json j = io::read_json(cfg_.config);
  if (!j.is_object()) throw FormatError(cfg_.config + ": config must be a JSON object");
  if (j.contains("subcommand") && j.contains("config")) {
    if (j.at("subcommand") != app_->get_name()) {
      throw FormatError(cfg_.config + ": manifest is for '" +
                        j.at("subcommand").get<std::string>() + "', not '" + app_->get_name() +
                        "'");
    }
    j = j.at("config");
  }
  for (const auto& [key, value] : j.items()) {
    const Field* field = nullptr;
    for (const Field& f : fields_) {
      if (f.name == key) field = &f;
    }
    if (!field) {
      throw FormatError(cfg_.config + ": unknown key '" + key + "' for " + app_->get_name());
    }
    if (key == "config" || key == "manifest") continue;
    if (options_.at(key)->count() > 0) continue;
    assign(*field, value);
  }
}

io::Json Binding::resolved() const {
  io::Json j = io::Json::object();
  for (const Field& f : fields_) {
    if (f.name == "config" || f.name == "manifest") continue;
    std::visit([&](auto* p) { j[f.name] = *p; }, f.ref);
  }
  return j;
}

}  // namespace cmvae::cli
