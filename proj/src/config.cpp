#include "v2gsim/config.hpp"

#include "v2gsim/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace v2gsim {

using nlohmann::json;

namespace {

class Reader {
public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    std::string field(const char* key) const { return path_ + "." + key; }

    const json* find(const char* key)
    {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void get(const char* key, double& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
            out = v->get<double>();
            if (!std::isfinite(out)) throw ConfigError(field(key) + ": must be finite");
        }
    }

    void get(const char* key, int& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
            out = v->get<int>();
        }
    }

    void get(const char* key, std::uint64_t& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) throw ConfigError(field(key) + ": expected a nonnegative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void get(const char* key, bool& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }

    void get(const char* key, std::string& out)
    {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }

    void get(const char* key, detector::Norm& out)
    {
        std::string s = detector::to_string(out);
        get(key, s);
        if (s == "l1") out = detector::Norm::L1;
        else if (s == "linf") out = detector::Norm::LInf;
        else throw ConfigError(field(key) + ": expected \"l1\" or \"linf\"");
    }

    void get(const char* key, essm::DriftModel& out)
    {
        std::string s = essm::to_string(out);
        get(key, s);
        if (s == "average") out = essm::DriftModel::Average;
        else if (s == "projected") out = essm::DriftModel::Projected;
        else throw ConfigError(field(key) + ": expected \"average\" or \"projected\"");
    }

    void get(const char* key, fleet::TruncatedNormal& out)
    {
        if (const json* v = find(key)) {
            Reader r(*v, field(key));
            r.get("mean", out.mean);
            r.get("std", out.stddev);
            r.get("lo", out.lo);
            r.get("hi", out.hi);
            r.finish();
        }
    }

    void get(const char* key, fleet::UniformRange& out)
    {
        if (const json* v = find(key)) {
            Reader r(*v, field(key));
            r.get("lo", out.lo);
            r.get("hi", out.hi);
            r.finish();
        }
    }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown field");
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

json normal_json(const fleet::TruncatedNormal& d) { return {{"mean", d.mean}, {"std", d.stddev}, {"lo", d.lo}, {"hi", d.hi}}; }
json uniform_json(const fleet::UniformRange& d) { return {{"lo", d.lo}, {"hi", d.hi}}; }

json area_json(const agc::AreaParams& a)
{
    return {{"h", a.h}, {"d", a.d}, {"r", a.r}, {"tg", a.tg}, {"tt", a.tt}, {"ka", a.ka}, {"b", a.b}};
}

void read_area(Reader& parent, const char* key, agc::AreaParams& a)
{
    if (const json* v = parent.find(key)) {
        Reader r(*v, parent.field(key));
        r.get("h", a.h);
        r.get("d", a.d);
        r.get("r", a.r);
        r.get("tg", a.tg);
        r.get("tt", a.tt);
        r.get("ka", a.ka);
        r.get("b", a.b);
        r.finish();
    }
}

} // namespace

double DispatchSchedule::at(double t_h) const
{
    if (in_event(t_h)) return event_mw * 1000.0;
    for (const auto& b : blocks)
        if (t_h >= b.start_h && t_h < b.end_h) return b.mw * 1000.0;
    return 0.0;
}

std::vector<DispatchBlock> default_dispatch_blocks()
{
    std::vector<DispatchBlock> out;
    const double t0 = 18.5;
    for (int q = 0; q < 46; ++q) {
        const double a = t0 + 0.25 * q;
        const double mid = a + 0.125;
        double amp = 10.0;
        if (mid < 19.0) amp = 4.0;
        else if (mid >= 28.0) amp = 2.0;
        else if (mid >= 26.0) amp = 5.0;
        const double phase = mid - t0;
        const double square = std::sin(2.0 * std::numbers::pi * phase / 1.25 + 0.3) >= 0.0 ? 1.0 : -1.0;
        const double shape = 0.6 * std::sin(2.0 * std::numbers::pi * phase / 3.0) + 0.4 * square;
        double mw = amp * shape;
        if (std::abs(mw) < 2.0) mw = mw < 0.0 ? -2.0 : 2.0;
        mw = std::round(mw * 100.0) / 100.0;
        out.push_back({a, a + 0.25, mw});
    }
    return out;
}

long ScenarioConfig::total_steps() const { return std::lround((end_h - start_h) / step_h()); }

void ScenarioConfig::validate() const
{
    fleet.validate();
    layout().validate();
    if (!(step_s > 0.0)) throw ConfigError("config.model.step_s: must be positive");
    if (period_steps < 1) throw ConfigError("config.model.period_steps: must be >= 1");
    if (!(end_h > start_h)) throw ConfigError("config.window.end_h: must be after start_h");
    if (attack_start_h < start_h || attack_start_h > end_h)
        throw ConfigError("config.attack.start_h: must lie inside the simulation window");
    if (attack_stop_h < attack_start_h) throw ConfigError("config.attack.stop_h: must not precede start_h");
    if (horizon < 0) throw ConfigError("config.attack.horizon: must be >= 0");
    if (!(attack_epsilon >= 0.0)) throw ConfigError("config.attack.epsilon: must be >= 0");
    if (sweeps < 1) throw ConfigError("config.attack.sweeps: must be >= 1");
    if (!(detector_epsilon > 0.0)) throw ConfigError("config.detector.epsilon: must be positive");
    for (std::size_t i = 0; i < dispatch.blocks.size(); ++i)
        if (!(dispatch.blocks[i].end_h > dispatch.blocks[i].start_h))
            throw ConfigError("config.control.dispatch.blocks[" + std::to_string(i) + "]: end_h must exceed start_h");
    if (!(dispatch.event_duration_h >= 0.0)) throw ConfigError("config.control.event.duration_h: must be >= 0");
    agc.validate();
    if (!(agc_options.dt_s > 0.0 && agc_options.dt_s <= 0.02)) throw ConfigError("config.agc.dt_s: must lie in (0, 0.02]");
    if (!(agc_options.duration_s > 0.0)) throw ConfigError("config.agc.duration_s: must be positive");
    if (agc_options.record_every < 1) throw ConfigError("config.agc.record_every: must be >= 1");
    if (out_dir.empty()) throw ConfigError("config.output.dir: must not be empty");
}

ScenarioConfig config_from_json(const json& doc)
{
    ScenarioConfig c;
    c.dispatch.blocks = default_dispatch_blocks();
    Reader root(doc, "config");
    root.get("seed", c.seed);

    if (const json* v = root.find("fleet")) {
        Reader r(*v, "config.fleet");
        r.get("size", c.fleet.size);
        r.get("compromised_fraction", c.fleet.compromised_fraction);
        r.get("anchor_hour", c.fleet.anchor_hour);
        r.get("soc_min", c.fleet.soc_min);
        r.get("soc_max", c.fleet.soc_max);
        r.get("start_soc", c.fleet.start_soc);
        r.get("departure_soc", c.fleet.departure_soc);
        r.get("start_time", c.fleet.start_time);
        r.get("finish_time", c.fleet.finish_time);
        r.get("power_kw", c.fleet.power_kw);
        r.get("efficiency", c.fleet.efficiency);
        r.get("capacity_kwh", c.fleet.capacity_kwh);
        r.finish();
    }
    if (const json* v = root.find("model")) {
        Reader r(*v, "config.model");
        r.get("n_s", c.ns);
        r.get("step_s", c.step_s);
        r.get("period_steps", c.period_steps);
        r.get("drift", c.drift);
        double period_s = 0.0;
        r.get("period_s", period_s);
        r.finish();
        if (period_s != 0.0) {
            const double ratio = period_s / c.step_s;
            if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-9)
                throw ConfigError("config.model.period_s: must be a positive multiple of step_s");
            const int derived = static_cast<int>(std::lround(ratio));
            if (v->contains("period_steps") && derived != c.period_steps)
                throw ConfigError("config.model.period_steps: inconsistent with period_s / step_s");
            c.period_steps = derived;
        }
    }
    if (const json* v = root.find("window")) {
        Reader r(*v, "config.window");
        r.get("start_h", c.start_h);
        r.get("end_h", c.end_h);
        r.finish();
    }
    if (const json* v = root.find("attack")) {
        Reader r(*v, "config.attack");
        r.get("enabled", c.attack_enabled);
        r.get("start_h", c.attack_start_h);
        r.get("stop_h", c.attack_stop_h);
        r.get("horizon", c.horizon);
        r.get("epsilon", c.attack_epsilon);
        r.get("norm", c.attack_norm);
        r.get("sweeps", c.sweeps);
        r.get("follow_broadcast", c.follow_broadcast);
        r.get("attacker_sees_clean_fleet", c.attacker_sees_clean_fleet);
        r.finish();
    }
    if (const json* v = root.find("detector")) {
        Reader r(*v, "config.detector");
        r.get("epsilon", c.detector_epsilon);
        r.get("norm", c.detector_norm);
        r.finish();
    }
    if (const json* v = root.find("control")) {
        Reader r(*v, "config.control");
        r.get("enabled", c.control_enabled);
        if (const json* d = r.find("dispatch")) {
            if (d->is_string()) {
                if (*d != "default") throw ConfigError("config.control.dispatch: expected \"default\" or a list of blocks");
            } else if (d->is_array()) {
                c.dispatch.blocks.clear();
                for (std::size_t i = 0; i < d->size(); ++i) {
                    Reader b((*d)[i], "config.control.dispatch[" + std::to_string(i) + "]");
                    DispatchBlock blk;
                    b.get("start_h", blk.start_h);
                    b.get("end_h", blk.end_h);
                    b.get("mw", blk.mw);
                    b.finish();
                    c.dispatch.blocks.push_back(blk);
                }
            } else {
                throw ConfigError("config.control.dispatch: expected \"default\" or a list of blocks");
            }
        }
        if (const json* e = r.find("event")) {
            Reader b(*e, "config.control.event");
            b.get("enabled", c.dispatch.event_enabled);
            b.get("time_h", c.dispatch.event_h);
            b.get("duration_h", c.dispatch.event_duration_h);
            b.get("mw", c.dispatch.event_mw);
            b.finish();
        }
        r.finish();
    }
    if (const json* v = root.find("agc")) {
        Reader r(*v, "config.agc");
        r.get("enabled", c.agc_enabled);
        read_area(r, "area1", c.agc.area[0]);
        read_area(r, "area2", c.agc.area[1]);
        r.get("kt", c.agc.kt);
        r.get("base_mva", c.agc.base_mva);
        if (const json* pm = r.find("pm_max")) {
            if (pm->is_null()) c.agc.pm_max = std::numeric_limits<double>::infinity();
            else if (pm->is_number()) c.agc.pm_max = pm->get<double>();
            else throw ConfigError("config.agc.pm_max: expected a number or null");
        }
        r.get("ev_delay_s", c.agc_options.ev_delay_s);
        r.get("dt_s", c.agc_options.dt_s);
        r.get("duration_s", c.agc_options.duration_s);
        r.get("record_every", c.agc_options.record_every);
        r.finish();
    }
    if (const json* v = root.find("output")) {
        Reader r(*v, "config.output");
        r.get("dir", c.out_dir);
        r.get("record_measurements", c.record_measurements);
        r.finish();
    }
    root.finish();
    c.agc_options.load_step_mw = c.dispatch.event_mw;
    c.validate();
    return c;
}

ScenarioConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(doc);
}

json config_to_json(const ScenarioConfig& c)
{
    json blocks = json::array();
    for (const auto& b : c.dispatch.blocks) blocks.push_back({{"start_h", b.start_h}, {"end_h", b.end_h}, {"mw", b.mw}});
    json pm = std::isfinite(c.agc.pm_max) ? json(c.agc.pm_max) : json(nullptr);
    return {
        {"seed", c.seed},
        {"fleet",
         {{"size", c.fleet.size},
          {"compromised_fraction", c.fleet.compromised_fraction},
          {"anchor_hour", c.fleet.anchor_hour},
          {"soc_min", c.fleet.soc_min},
          {"soc_max", c.fleet.soc_max},
          {"start_soc", normal_json(c.fleet.start_soc)},
          {"departure_soc", normal_json(c.fleet.departure_soc)},
          {"start_time", normal_json(c.fleet.start_time)},
          {"finish_time", normal_json(c.fleet.finish_time)},
          {"power_kw", uniform_json(c.fleet.power_kw)},
          {"efficiency", uniform_json(c.fleet.efficiency)},
          {"capacity_kwh", uniform_json(c.fleet.capacity_kwh)}}},
        {"model", {{"n_s", c.ns}, {"step_s", c.step_s}, {"period_steps", c.period_steps}, {"drift", essm::to_string(c.drift)}}},
        {"window", {{"start_h", c.start_h}, {"end_h", c.end_h}}},
        {"attack",
         {{"enabled", c.attack_enabled},
          {"start_h", c.attack_start_h},
          {"stop_h", c.attack_stop_h},
          {"horizon", c.horizon},
          {"epsilon", c.attack_epsilon},
          {"norm", detector::to_string(c.attack_norm)},
          {"sweeps", c.sweeps},
          {"follow_broadcast", c.follow_broadcast},
          {"attacker_sees_clean_fleet", c.attacker_sees_clean_fleet}}},
        {"detector", {{"epsilon", c.detector_epsilon}, {"norm", detector::to_string(c.detector_norm)}}},
        {"control",
         {{"enabled", c.control_enabled},
          {"dispatch", blocks},
          {"event",
           {{"enabled", c.dispatch.event_enabled},
            {"time_h", c.dispatch.event_h},
            {"duration_h", c.dispatch.event_duration_h},
            {"mw", c.dispatch.event_mw}}}}},
        {"agc",
         {{"enabled", c.agc_enabled},
          {"area1", area_json(c.agc.area[0])},
          {"area2", area_json(c.agc.area[1])},
          {"kt", c.agc.kt},
          {"base_mva", c.agc.base_mva},
          {"pm_max", pm},
          {"ev_delay_s", c.agc_options.ev_delay_s},
          {"dt_s", c.agc_options.dt_s},
          {"duration_s", c.agc_options.duration_s},
          {"record_every", c.agc_options.record_every}}},
        {"output", {{"dir", c.out_dir}, {"record_measurements", c.record_measurements}}},
    };
}

std::string config_hash(const ScenarioConfig& cfg)
{
    json doc = config_to_json(cfg);
    // The output location does not change results.
    doc.erase("output");
    const std::string text = doc.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace v2gsim
