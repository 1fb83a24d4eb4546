#include "deskbot/config/experiment.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "deskbot/error.hpp"

namespace deskbot::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line = 0;
  bool used = false;
};

struct Section {
  std::string name;
  int line = 0;
  std::map<std::string, Entry, std::less<>> entries;

  const Entry* find(std::string_view key) {
    auto it = entries.find(key);
    if (it == entries.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  const Entry& require(std::string_view key) {
    const Entry* e = find(key);
    if (e == nullptr) throw ConfigError(fmt::format("[{}] is missing '{}'", name, key), line);
    return *e;
  }
};

double to_double(const Entry& e, std::string_view what) {
  double v = 0.0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not a number", what, e.value), e.line);
  return v;
}

long long to_int(const Entry& e, std::string_view what) {
  long long v = 0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not an integer", what, e.value), e.line);
  return v;
}

std::uint64_t to_uint(const Entry& e, std::string_view what) {
  std::uint64_t v = 0;
  const char* end = e.value.data() + e.value.size();
  auto [ptr, ec] = std::from_chars(e.value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: '{}' is not an unsigned integer", what, e.value), e.line);
  return v;
}

bool to_bool(const Entry& e, std::string_view what) {
  if (e.value == "true") return true;
  if (e.value == "false") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", what, e.value), e.line);
}

std::vector<double> to_doubles(const Entry& e, std::string_view what, std::size_t count) {
  std::vector<double> out;
  std::istringstream in(e.value);
  std::string tok;
  while (in >> tok) out.push_back(to_double(Entry{tok, e.line}, what));
  if (out.size() != count) {
    throw ConfigError(fmt::format("{}: expected {} numbers, got {}", what, count, out.size()), e.line);
  }
  return out;
}

template <typename T, typename F>
void maybe(Section& s, std::string_view key, T& target, F convert) {
  if (const Entry* e = s.find(key)) target = convert(*e, fmt::format("[{}] {}", s.name, key));
}

std::vector<Section> split_sections(std::string_view text) {
  std::vector<Section> sections;
  std::set<std::string> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
      std::string name(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) throw ConfigError("empty section name", line_no);
      if (!seen.insert(name).second) throw ConfigError(fmt::format("duplicate section [{}]", name), line_no);
      sections.push_back(Section{name, line_no, {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("expected 'key = value', got '{}'", line), line_no);
    if (sections.empty()) throw ConfigError("key outside of any section", line_no);
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("empty key", line_no);
    auto [it, inserted] = sections.back().entries.emplace(key, Entry{std::string(trim(line.substr(eq + 1))), line_no});
    if (!inserted) throw ConfigError(fmt::format("duplicate key '{}'", key), line_no);
  }
  return sections;
}

std::string fmt_double(double v) { return fmt::format("{}", v); }

}  // namespace

ppo::TrainerConfig ExperimentConfig::trainer_config() const {
  ppo::TrainerConfig t = trainer;
  t.seed = seed;
  return t;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  auto same_objects = [](const std::vector<sim::SceneObject>& a, const std::vector<sim::SceneObject>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].id != b[i].id || a[i].color != b[i].color || a[i].center != b[i].center ||
          a[i].half_extent != b[i].half_extent) {
        return false;
      }
    }
    return true;
  };
  auto same_cameras = [](const std::vector<render::CameraSpec>& a, const std::vector<render::CameraSpec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].pose != b[i].pose || a[i].width != b[i].width || a[i].height != b[i].height ||
          a[i].window_min != b[i].window_min || a[i].window_max != b[i].window_max) {
        return false;
      }
    }
    return true;
  };
  const auto& ta = env.table;
  const auto& tb = o.env.table;
  return name == o.name && seed == o.seed && output_dir == o.output_dir && robot == o.robot &&
         env.robot.name == o.env.robot.name && env.contact_radius == o.env.contact_radius &&
         same_objects(env.objects, o.env.objects) && ta.x_min == tb.x_min && ta.x_max == tb.x_max &&
         ta.y_min == tb.y_min && ta.y_max == tb.y_max && same_cameras(env.cameras, o.env.cameras) &&
         env.instructions.instructions == o.env.instructions.instructions &&
         env.instructions.reward_specs == o.env.instructions.reward_specs && env.horizon == o.env.horizon &&
         modalities == o.modalities && actor_head_gain == o.actor_head_gain && trainer == o.trainer;
}

ExperimentConfig parse_experiment(std::string_view text) {
  auto sections = split_sections(text);
  ExperimentConfig cfg;
  cfg.env.objects.clear();
  cfg.env.cameras.clear();
  bool have_robot = false;

  for (auto& s : sections) {
    const std::string& n = s.name;
    if (n == "experiment") {
      maybe(s, "name", cfg.name, [](const Entry& e, const std::string&) { return e.value; });
      maybe(s, "seed", cfg.seed, to_uint);
      maybe(s, "output_dir", cfg.output_dir, [](const Entry& e, const std::string&) { return e.value; });
    } else if (n == "robot") {
      const Entry& e = s.require("config");
      try {
        cfg.env.robot = sim::robot_by_name(e.value);
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), e.line);
      }
      cfg.robot = e.value;
      have_robot = true;
      maybe(s, "contact_radius", cfg.env.contact_radius, to_double);
    } else if (n == "scene") {
      maybe(s, "horizon", cfg.env.horizon, [](const Entry& e, const std::string& w) { return static_cast<int>(to_int(e, w)); });
      if (const Entry* e = s.find("table")) {
        const auto v = to_doubles(*e, "[scene] table", 4);
        cfg.env.table = {v[0], v[1], v[2], v[3]};
      }
    } else if (n.rfind("cube.", 0) == 0) {
      sim::SceneObject o;
      try {
        o.id = std::stoi(n.substr(5));
      } catch (...) {
        throw ConfigError(fmt::format("cube section [{}] needs a numeric id", n), s.line);
      }
      const Entry& color = s.require("color");
      try {
        o.color = sim::parse_color(color.value);
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), color.line);
      }
      const auto c = to_doubles(s.require("center"), fmt::format("[{}] center", n), 3);
      o.center = sim::Vec3(c[0], c[1], c[2]);
      o.half_extent = to_double(s.require("half_extent"), fmt::format("[{}] half_extent", n));
      if (!(o.half_extent > 0.0)) throw ConfigError("half_extent must be positive", s.find("half_extent")->line);
      cfg.env.objects.push_back(o);
    } else if (n.rfind("camera.", 0) == 0) {
      render::CameraSpec c;
      const std::string pose = n.substr(7);
      if (pose == "front") {
        c.pose = render::CameraPose::kFront;
      } else if (pose == "top") {
        c.pose = render::CameraPose::kTop;
      } else {
        throw ConfigError(fmt::format("unknown camera '{}'", pose), s.line);
      }
      c.width = static_cast<int>(to_int(s.require("width"), fmt::format("[{}] width", n)));
      c.height = static_cast<int>(to_int(s.require("height"), fmt::format("[{}] height", n)));
      const Entry& win = s.require("window");
      const auto w = to_doubles(win, fmt::format("[{}] window", n), 4);
      c.window_min = {w[0], w[2]};
      c.window_max = {w[1], w[3]};
      try {
        c.validate();
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), s.line);
      }
      cfg.env.cameras.push_back(c);
    } else if (n.rfind("instruction.", 0) == 0) {
      const Entry& text_e = s.require("text");
      env::RewardSpec spec;
      const Entry& kind = s.require("reward");
      const Entry& target = s.require("target");
      try {
        spec.kind = env::parse_reward_kind(kind.value);
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), kind.line);
      }
      try {
        spec.target_color = sim::parse_color(target.value);
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), target.line);
      }
      maybe(s, "correct_gain", spec.correct_gain, to_double);
      maybe(s, "wrong_penalty", spec.wrong_penalty, to_double);
      try {
        cfg.env.instructions.add(text_e.value, spec);
      } catch (const ContractViolation& err) {
        throw ConfigError(err.what(), text_e.line);
      }
    } else if (n == "observation") {
      maybe(s, "vision", cfg.modalities.vision, to_bool);
      maybe(s, "proprio", cfg.modalities.proprio, to_bool);
      maybe(s, "tactile", cfg.modalities.tactile, to_bool);
    } else if (n == "agent") {
      maybe(s, "actor_head_gain", cfg.actor_head_gain, to_double);
    } else if (n == "trainer") {
      auto& t = cfg.trainer;
      auto as_int = [](const Entry& e, const std::string& w) { return static_cast<int>(to_int(e, w)); };
      maybe(s, "lr", t.lr, to_double);
      maybe(s, "epochs", t.epochs, as_int);
      maybe(s, "clip_eps", t.clip_eps, to_double);
      maybe(s, "gamma", t.gamma, to_double);
      maybe(s, "value_coef", t.value_coef, to_double);
      maybe(s, "entropy_coef", t.entropy_coef, to_double);
      maybe(s, "rollouts", t.rollouts, as_int);
      maybe(s, "total_steps", t.total_steps, [](const Entry& e, const std::string& w) { return static_cast<long>(to_int(e, w)); });
      maybe(s, "eval_every", t.eval_every, as_int);
      maybe(s, "eval_episodes", t.eval_episodes, as_int);
      maybe(s, "chunk_rows", t.chunk_rows, as_int);
      try {
        t.validate();
      } catch (const ConfigError& err) {
        throw ConfigError(err.what(), s.line);
      }
    } else {
      throw ConfigError(fmt::format("unknown section [{}]", n), s.line);
    }
    for (const auto& [key, e] : s.entries) {
      if (!e.used) throw ConfigError(fmt::format("unknown key '{}' in [{}]", key, n), e.line);
    }
  }
  if (!have_robot) throw ConfigError("missing [robot] section");
  cfg.trainer.seed = cfg.seed;
  cfg.env.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

std::string serialize_experiment(const ExperimentConfig& c) {
  std::string out;
  auto line = [&out](std::string_view key, const std::string& value) { out += fmt::format("{} = {}\n", key, value); };
  out += "[experiment]\n";
  line("name", c.name);
  line("seed", std::to_string(c.seed));
  line("output_dir", c.output_dir);
  out += "\n[robot]\n";
  line("config", c.robot);
  line("contact_radius", fmt_double(c.env.contact_radius));
  out += "\n[scene]\n";
  line("horizon", std::to_string(c.env.horizon));
  const auto& t = c.env.table;
  line("table", fmt::format("{} {} {} {}", t.x_min, t.x_max, t.y_min, t.y_max));
  for (const auto& o : c.env.objects) {
    out += fmt::format("\n[cube.{}]\n", o.id);
    line("color", std::string(sim::color_name(o.color)));
    line("center", fmt::format("{} {} {}", o.center.x(), o.center.y(), o.center.z()));
    line("half_extent", fmt_double(o.half_extent));
  }
  for (const auto& cam : c.env.cameras) {
    out += fmt::format("\n[camera.{}]\n", cam.pose == render::CameraPose::kFront ? "front" : "top");
    line("width", std::to_string(cam.width));
    line("height", std::to_string(cam.height));
    line("window", fmt::format("{} {} {} {}", cam.window_min[0], cam.window_max[0], cam.window_min[1], cam.window_max[1]));
  }
  const auto& set = c.env.instructions;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spec = set.reward_specs[i];
    out += fmt::format("\n[instruction.{}]\n", set.instructions[i].id);
    line("text", set.instructions[i].text);
    line("reward", std::string(env::reward_kind_name(spec.kind)));
    line("target", std::string(sim::color_name(spec.target_color)));
    line("correct_gain", fmt_double(spec.correct_gain));
    line("wrong_penalty", fmt_double(spec.wrong_penalty));
  }
  out += "\n[observation]\n";
  line("vision", c.modalities.vision ? "true" : "false");
  line("proprio", c.modalities.proprio ? "true" : "false");
  line("tactile", c.modalities.tactile ? "true" : "false");
  out += "\n[agent]\n";
  line("actor_head_gain", fmt_double(c.actor_head_gain));
  const auto& tr = c.trainer;
  out += "\n[trainer]\n";
  line("lr", fmt_double(tr.lr));
  line("epochs", std::to_string(tr.epochs));
  line("clip_eps", fmt_double(tr.clip_eps));
  line("gamma", fmt_double(tr.gamma));
  line("value_coef", fmt_double(tr.value_coef));
  line("entropy_coef", fmt_double(tr.entropy_coef));
  line("rollouts", std::to_string(tr.rollouts));
  line("total_steps", std::to_string(tr.total_steps));
  line("eval_every", std::to_string(tr.eval_every));
  line("eval_episodes", std::to_string(tr.eval_episodes));
  line("chunk_rows", std::to_string(tr.chunk_rows));
  return out;
}

}  // namespace deskbot::config
