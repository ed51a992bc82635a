#include "pglab/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pglab {

namespace {

constexpr std::string_view kMdpMagic = "pglab-mdp 1";
constexpr std::string_view kSlackPrefix = "slack:";

std::string format_scientific(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17e", x);
    return buf;
}

double parse_double(const std::string& text, const std::string& where) {
    if (text == "inf") return kInf;
    if (text == "-inf") return kNegInf;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        if (!(errno == ERANGE && end != text.c_str() && *end == '\0')) {
            throw IoError(where + ": cannot parse number '" + text + "'");
        }
    }
    return v;
}

int parse_int(const std::string& text, const std::string& where) {
    const double v = parse_double(text, where);
    if (v != static_cast<int>(v)) throw IoError(where + ": expected an integer, got '" + text + "'");
    return static_cast<int>(v);
}

class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    std::string next(const char* expect) {
        std::string line;
        while (std::getline(in_, line)) {
            ++number_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos) continue;
            return line.substr(first);
        }
        throw IoError(std::string("unexpected end of input, expected ") + expect);
    }

    std::string where() const { return "line " + std::to_string(number_); }

    std::string keyed(const char* key) {
        const std::string line = next(key);
        std::istringstream ss(line);
        std::string word;
        std::string value;
        ss >> word >> value;
        if (word != key || value.empty()) throw IoError(where() + ": expected '" + key + " <value>'");
        return value;
    }

    std::vector<double> numbers(int count, const char* what) {
        const std::string line = next(what);
        std::istringstream ss(line);
        std::vector<double> out;
        std::string tok;
        while (ss >> tok) out.push_back(parse_double(tok, where()));
        if (static_cast<int>(out.size()) != count) {
            throw IoError(where() + ": expected " + std::to_string(count) + " numbers in " + what + ", got " +
                          std::to_string(out.size()));
        }
        return out;
    }

private:
    std::istream& in_;
    int number_ = 0;
};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    cells.push_back(cell);
    return cells;
}

std::string cell(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

std::optional<double> parse_cell(const std::string& text, const std::string& where) {
    if (text.empty()) return std::nullopt;
    return parse_double(text, where);
}

} // namespace

std::string format_double(double x) {
    if (x == 0.0) x = 0.0;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string format_mdp(const TabularMdp& mdp) {
    std::ostringstream os;
    write_mdp(os, mdp);
    return os.str();
}

void write_mdp(std::ostream& out, const TabularMdp& mdp) {
    out << kMdpMagic << '\n';
    out << "n_states " << mdp.n_states() << '\n';
    out << "n_actions " << mdp.n_actions() << '\n';
    out << "gamma " << format_scientific(mdp.gamma()) << '\n';
    out << "reward\n";
    for (int s = 0; s < mdp.n_states(); ++s) {
        for (int a = 0; a < mdp.n_actions(); ++a) out << (a ? " " : "") << format_scientific(mdp.reward()(s, a));
        out << '\n';
    }
    out << "transition\n";
    for (int row = 0; row < mdp.n_states() * mdp.n_actions(); ++row) {
        for (int t = 0; t < mdp.n_states(); ++t) out << (t ? " " : "") << format_scientific(mdp.transition()(row, t));
        out << '\n';
    }
}

TabularMdp read_mdp(std::istream& in) {
    LineReader reader(in);
    if (reader.next("header") != kMdpMagic) throw IoError(reader.where() + ": missing 'pglab-mdp 1' header");
    const int ns = parse_int(reader.keyed("n_states"), reader.where());
    const int na = parse_int(reader.keyed("n_actions"), reader.where());
    const double gamma = parse_double(reader.keyed("gamma"), reader.where());
    if (ns < 1 || na < 1) throw IoError(reader.where() + ": n_states and n_actions must be positive");
    if (reader.next("reward") != "reward") throw IoError(reader.where() + ": expected 'reward'");
    Matrix reward(ns, na);
    for (int s = 0; s < ns; ++s) {
        const auto row = reader.numbers(na, "reward row");
        for (int a = 0; a < na; ++a) reward(s, a) = row[a];
    }
    if (reader.next("transition") != "transition") throw IoError(reader.where() + ": expected 'transition'");
    Matrix transition(ns * na, ns);
    for (int r = 0; r < ns * na; ++r) {
        const auto row = reader.numbers(ns, "transition row");
        for (int t = 0; t < ns; ++t) transition(r, t) = row[t];
    }
    TabularMdp mdp(std::move(reward), std::move(transition), gamma);
    require_valid(mdp);
    return mdp;
}

void save_mdp(const std::string& path, const TabularMdp& mdp) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_mdp(out, mdp);
    if (!out) throw IoError("failed writing " + path);
}

TabularMdp load_mdp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return read_mdp(in);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

std::string mdp_fingerprint(const TabularMdp& mdp) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : format_mdp(mdp)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

const std::vector<std::string>& trace_base_columns() {
    static const std::vector<std::string> cols{"k",      "eta_k",     "v_gap_inf", "v_gap_rho",
                                               "l_k_kp1", "b_max",    "kappa_est", "kl_to_opt"};
    return cols;
}

void write_trace_csv(std::ostream& out, const Trace& trace) {
    const TraceMeta& m = trace.meta;
    out << "# method=" << method_name(m.method) << '\n';
    out << "# schedule=" << schedule_name(m.schedule.kind) << '\n';
    out << "# eta=" << format_double(m.schedule.eta) << '\n';
    out << "# c3=" << format_double(m.schedule.c3) << '\n';
    out << "# c_adapt=" << format_double(m.schedule.c_adapt) << '\n';
    out << "# tau=" << cell(m.tau) << '\n';
    out << "# gamma=" << format_double(m.gamma) << '\n';
    out << "# n_states=" << m.n_states << '\n';
    out << "# n_actions=" << m.n_actions << '\n';
    out << "# mu_min=" << format_double(m.mu_min) << '\n';
    out << "# rho_min=" << format_double(m.rho_min) << '\n';
    out << "# delta=" << format_double(m.delta) << '\n';
    out << "# max_optimal_set=" << m.max_optimal_set << '\n';
    out << "# dstar_over_rho=" << format_double(m.dstar_over_rho) << '\n';
    out << "# fingerprint=" << m.fingerprint << '\n';

    const auto& base = trace_base_columns();
    for (std::size_t i = 0; i < base.size(); ++i) out << (i ? "," : "") << base[i];
    for (const auto& c : m.checks) out << ',' << kSlackPrefix << c;
    out << '\n';
    for (const auto& r : trace.records) {
        out << r.k << ',' << cell(r.eta_k) << ',' << format_double(r.v_gap_inf) << ',' << format_double(r.v_gap_rho)
            << ',' << cell(r.l_k_kp1) << ',' << cell(r.b_max) << ',' << cell(r.kappa_est) << ',' << cell(r.kl_to_opt);
        for (const auto& c : m.checks) {
            auto it = r.slacks.find(c);
            out << ',' << (it == r.slacks.end() ? std::string() : cell(it->second));
        }
        out << '\n';
    }
}

Trace read_trace_csv(std::istream& in) {
    Trace trace;
    TraceMeta& m = trace.meta;
    std::string line;
    int number = 0;
    std::vector<std::string> header;
    auto where = [&] { return "line " + std::to_string(number); };
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] != '#') {
            header = split_csv(line);
            break;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        const std::string value = line.substr(eq + 1);
        if (key == "method") {
            auto parsed = parse_method(value);
            if (!parsed) throw IoError(where() + ": unknown method '" + value + "'");
            m.method = *parsed;
        } else if (key == "schedule") {
            auto parsed = parse_schedule(value);
            if (!parsed) throw IoError(where() + ": unknown schedule '" + value + "'");
            m.schedule.kind = *parsed;
        } else if (key == "eta") {
            m.schedule.eta = parse_double(value, where());
        } else if (key == "c3") {
            m.schedule.c3 = parse_double(value, where());
        } else if (key == "c_adapt") {
            m.schedule.c_adapt = parse_double(value, where());
        } else if (key == "tau") {
            m.tau = parse_cell(value, where());
        } else if (key == "gamma") {
            m.gamma = parse_double(value, where());
        } else if (key == "n_states") {
            m.n_states = parse_int(value, where());
        } else if (key == "n_actions") {
            m.n_actions = parse_int(value, where());
        } else if (key == "mu_min") {
            m.mu_min = parse_double(value, where());
        } else if (key == "rho_min") {
            m.rho_min = parse_double(value, where());
        } else if (key == "delta") {
            m.delta = parse_double(value, where());
        } else if (key == "max_optimal_set") {
            m.max_optimal_set = parse_int(value, where());
        } else if (key == "dstar_over_rho") {
            m.dstar_over_rho = parse_double(value, where());
        } else if (key == "fingerprint") {
            m.fingerprint = value;
        }
    }
    const auto& base = trace_base_columns();
    if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin())) {
        throw IoError("trace header does not start with the fixed columns");
    }
    for (std::size_t i = base.size(); i < header.size(); ++i) {
        if (header[i].rfind(kSlackPrefix, 0) != 0) throw IoError("unexpected column '" + header[i] + "'");
        m.checks.push_back(header[i].substr(kSlackPrefix.size()));
    }
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw IoError(where() + ": expected " + std::to_string(header.size()) + " cells, got " +
                          std::to_string(cells.size()));
        }
        IterationRecord r;
        r.k = parse_int(cells[0], where());
        r.eta_k = parse_cell(cells[1], where());
        r.v_gap_inf = parse_double(cells[2], where());
        r.v_gap_rho = parse_double(cells[3], where());
        r.l_k_kp1 = parse_cell(cells[4], where());
        r.b_max = parse_cell(cells[5], where());
        r.kappa_est = parse_cell(cells[6], where());
        r.kl_to_opt = parse_cell(cells[7], where());
        for (std::size_t i = 0; i < m.checks.size(); ++i) r.slacks[m.checks[i]] = parse_cell(cells[base.size() + i], where());
        if (!trace.records.empty() && r.k <= trace.records.back().k) throw IoError(where() + ": k must increase");
        trace.records.push_back(std::move(r));
    }
    return trace;
}

void save_trace_csv(const std::string& path, const Trace& trace) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        write_trace_csv(out, trace);
        if (!out) throw IoError("failed writing " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

Trace load_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return read_trace_csv(in);
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

} // namespace pglab
