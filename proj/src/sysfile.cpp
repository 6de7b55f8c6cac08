#include "stoflin/sysfile.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace stoflin {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

struct KeyValue {
    std::string key, value;
    int line;
};

using Section = std::vector<KeyValue>;

double parse_number(const std::string& s, int line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw SysFileError("malformed number '" + s + "'", line);
    return v;
}

const KeyValue* find(const Section& sec, const std::string& key) {
    for (const KeyValue& kv : sec)
        if (kv.key == key) return &kv;
    return nullptr;
}

Expr parse_component(const std::string& text, int dim, int line) {
    try {
        return parse_expr(text, dim);
    } catch (const ParseError& pe) {
        throw SysFileError(std::string("expression error: ") + pe.what(), line);
    }
}

}  // namespace

SystemFile read_system_text(const std::string& text) {
    std::map<std::string, Section> sections;
    std::string current;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw SysFileError("unterminated section header", lineno);
            current = trim(line.substr(1, line.size() - 2));
            sections[current];
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw SysFileError("expected key = value", lineno);
        if (current.empty()) throw SysFileError("key outside a section", lineno);
        sections[current].push_back({trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
    }

    auto sys_it = sections.find("system");
    if (sys_it == sections.end()) throw SysFileError("missing [system] section", 0);
    const Section& sys = sys_it->second;

    StochasticSystem s;
    const KeyValue* kn = find(sys, "n");
    if (!kn) throw SysFileError("missing n in [system]", 0);
    s.dim = static_cast<int>(parse_number(kn->value, kn->line));
    if (s.dim < 1) throw SysFileError("n must be >= 1", kn->line);
    if (const KeyValue* km = find(sys, "m")) s.inputs = static_cast<int>(parse_number(km->value, km->line));
    if (const KeyValue* kk = find(sys, "k")) s.noise = static_cast<int>(parse_number(kk->value, kk->line));
    const KeyValue* kc = find(sys, "convention");
    if (!kc) throw SysFileError("missing convention in [system]", 0);
    try {
        s.convention = convention_from_name(kc->value);
    } catch (const std::invalid_argument& e) {
        throw SysFileError(e.what(), kc->line);
    }

    const KeyValue* kx = find(sys, "x0");
    if (!kx) throw SysFileError("missing x0 in [system]", 0);
    for (const std::string& c : split(kx->value, ','))
        s.x0.push_back(parse_number(c, kx->line));
    if (static_cast<int>(s.x0.size()) != s.dim)
        throw SysFileError("x0 must list n coordinates", kx->line);

    std::uint64_t seed = 0;
    if (const KeyValue* ks = find(sys, "seed"))
        seed = static_cast<std::uint64_t>(parse_number(ks->value, ks->line));
    std::vector<Interval> box(static_cast<std::size_t>(s.dim), Interval{-1.0, 1.0});
    if (const KeyValue* kb = find(sys, "box")) {
        const auto parts = split(kb->value, ',');
        if (static_cast<int>(parts.size()) != s.dim)
            throw SysFileError("box must list n intervals lo:hi", kb->line);
        for (int i = 0; i < s.dim; ++i) {
            const auto lohi = split(parts[static_cast<std::size_t>(i)], ':');
            if (lohi.size() != 2) throw SysFileError("box interval must be lo:hi", kb->line);
            box[static_cast<std::size_t>(i)] =
                Interval{parse_number(lohi[0], kb->line), parse_number(lohi[1], kb->line)};
        }
    }
    s.sampler = DomainSampler(std::move(box), seed);

    if (auto it = sections.find("params"); it != sections.end())
        for (const KeyValue& kv : it->second) s.params[kv.key] = parse_number(kv.value, kv.line);

    const auto read_field = [&](const std::string& section, const std::string& prefix) {
        auto it = sections.find(section);
        std::vector<Expr> comps;
        if (it == sections.end()) return comps;
        comps.resize(static_cast<std::size_t>(s.dim), integer(0));
        std::vector<bool> seen(static_cast<std::size_t>(s.dim), false);
        for (const KeyValue& kv : it->second) {
            if (kv.key.rfind(prefix, 0) != 0)
                throw SysFileError("unexpected key '" + kv.key + "' in [" + section + "]", kv.line);
            const int idx = std::atoi(kv.key.c_str() + prefix.size());
            if (idx < 1 || idx > s.dim)
                throw SysFileError("component index out of range in '" + kv.key + "'", kv.line);
            comps[static_cast<std::size_t>(idx - 1)] = parse_component(kv.value, s.dim, kv.line);
            seen[static_cast<std::size_t>(idx - 1)] = true;
        }
        for (int i = 0; i < s.dim; ++i)
            if (!seen[static_cast<std::size_t>(i)])
                throw SysFileError("missing component " + prefix + std::to_string(i + 1) +
                                       " in [" + section + "]",
                                   0);
        return comps;
    };

    auto fcomps = read_field("f", "f");
    if (fcomps.empty()) throw SysFileError("missing [f] section", 0);
    s.f = VectorField(s.dim, std::move(fcomps));
    auto gcomps = read_field("g", "g");
    if (gcomps.empty()) throw SysFileError("missing [g] section", 0);
    s.g = VectorField(s.dim, std::move(gcomps));

    if (sections.count("sigma")) {
        auto scomps = read_field("sigma", "sigma");
        s.sigma = MatrixField::from_column(VectorField(s.dim, std::move(scomps)));
    } else {
        s.sigma = MatrixField::zero(s.dim, 1);
    }
    s.noise = s.sigma.cols;
    s.validate();

    SystemFile doc;
    doc.system = std::move(s);

    if (auto it = sections.find("transform"); it != sections.end()) {
        const int n = doc.system.dim;
        std::vector<Expr> fwd(static_cast<std::size_t>(n), integer(0));
        std::vector<Expr> inv(static_cast<std::size_t>(n), integer(0));
        std::vector<bool> seen_f(static_cast<std::size_t>(n), false), seen_i(static_cast<std::size_t>(n), false);
        for (const KeyValue& kv : it->second) {
            const bool is_inv = kv.key.rfind("Tinv", 0) == 0;
            const std::string prefix = is_inv ? "Tinv" : "T";
            if (kv.key.rfind(prefix, 0) != 0)
                throw SysFileError("unexpected key '" + kv.key + "' in [transform]", kv.line);
            const int idx = std::atoi(kv.key.c_str() + prefix.size());
            if (idx < 1 || idx > n)
                throw SysFileError("component index out of range in '" + kv.key + "'", kv.line);
            (is_inv ? inv : fwd)[static_cast<std::size_t>(idx - 1)] =
                parse_component(kv.value, n, kv.line);
            (is_inv ? seen_i : seen_f)[static_cast<std::size_t>(idx - 1)] = true;
        }
        for (int i = 0; i < n; ++i)
            if (!seen_f[static_cast<std::size_t>(i)])
                throw SysFileError("missing T" + std::to_string(i + 1) + " in [transform]", 0);
        bool any_inv = false, all_inv = true;
        for (int i = 0; i < n; ++i) {
            any_inv = any_inv || seen_i[static_cast<std::size_t>(i)];
            all_inv = all_inv && seen_i[static_cast<std::size_t>(i)];
        }
        if (any_inv && !all_inv) throw SysFileError("incomplete inverse in [transform]", 0);
        doc.transform = Diffeo(n, std::move(fwd),
                               any_inv ? std::optional<std::vector<Expr>>(std::move(inv))
                                       : std::nullopt);
    }

    if (auto it = sections.find("feedback"); it != sections.end()) {
        Feedback fb;
        const KeyValue* ka = find(it->second, "alpha");
        const KeyValue* kb = find(it->second, "beta");
        if (!ka || !kb) throw SysFileError("[feedback] needs alpha and beta", 0);
        fb.alpha = parse_component(ka->value, doc.system.dim, ka->line);
        fb.beta = parse_component(kb->value, doc.system.dim, kb->line);
        doc.feedback = std::move(fb);
    }
    return doc;
}

SystemFile read_system_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open system file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return read_system_text(ss.str());
}

std::string write_system_text(const SystemFile& doc) {
    const StochasticSystem& s = doc.system;
    std::ostringstream out;
    out << "[system]\n";
    out << "n = " << s.dim << "\n";
    out << "m = " << s.inputs << "\n";
    out << "k = " << s.noise << "\n";
    out << "convention = " << convention_name(s.convention) << "\n";
    out << "x0 = ";
    for (int i = 0; i < s.dim; ++i) out << (i ? ", " : "") << format_double(s.x0[static_cast<std::size_t>(i)]);
    out << "\n";
    out << "box = ";
    for (int i = 0; i < s.dim; ++i) {
        const Interval& iv = s.sampler.box[static_cast<std::size_t>(i)];
        out << (i ? ", " : "") << format_double(iv.lo) << ":" << format_double(iv.hi);
    }
    out << "\n";
    out << "seed = " << s.sampler.seed << "\n";
    if (!s.params.empty()) {
        out << "\n[params]\n";
        for (const auto& [name, value] : s.params) out << name << " = " << format_double(value) << "\n";
    }
    out << "\n[f]\n";
    for (int i = 0; i < s.dim; ++i) out << "f" << (i + 1) << " = " << to_string(s.f[i]) << "\n";
    out << "\n[g]\n";
    for (int i = 0; i < s.dim; ++i) out << "g" << (i + 1) << " = " << to_string(s.g[i]) << "\n";
    out << "\n[sigma]\n";
    for (int i = 0; i < s.dim; ++i)
        out << "sigma" << (i + 1) << " = " << to_string(s.sigma.at(i, 0)) << "\n";
    if (doc.transform) {
        out << "\n[transform]\n";
        for (int i = 0; i < doc.transform->dim; ++i)
            out << "T" << (i + 1) << " = "
                << to_string(doc.transform->forward[static_cast<std::size_t>(i)]) << "\n";
        if (doc.transform->has_inverse())
            for (int i = 0; i < doc.transform->dim; ++i)
                out << "Tinv" << (i + 1) << " = "
                    << to_string((*doc.transform->inverse)[static_cast<std::size_t>(i)]) << "\n";
    }
    if (doc.feedback) {
        out << "\n[feedback]\n";
        out << "alpha = " << to_string(doc.feedback->alpha) << "\n";
        out << "beta = " << to_string(doc.feedback->beta) << "\n";
    }
    return out.str();
}

void write_system_file(const std::string& path, const SystemFile& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write system file: " + path);
    out << write_system_text(doc);
}

}  // namespace stoflin
