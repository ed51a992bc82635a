#pragma once

#include "pglab/diagnostics.hpp"

#include <iosfwd>
#include <string>

namespace pglab {

/// Error reading or writing a file; the message names the path or line.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Line-based MDP text format:
 *
 *   pglab-mdp 1
 *   n_states <S>
 *   n_actions <A>
 *   gamma <g>
 *   reward
 *   <S lines of A numbers>
 *   transition
 *   <S*A lines of S numbers, row s*A+a>
 *
 * Numbers are written with 17 significant digits so a round trip is exact.
 */
std::string format_mdp(const TabularMdp& mdp);
void write_mdp(std::ostream& out, const TabularMdp& mdp);
/// Parses and validates; throws IoError on malformed text, InvalidArgument on an invalid MDP.
TabularMdp read_mdp(std::istream& in);
void save_mdp(const std::string& path, const TabularMdp& mdp);
TabularMdp load_mdp(const std::string& path);

/// FNV-1a 64 of format_mdp, as 16 hex digits.
std::string mdp_fingerprint(const TabularMdp& mdp);

/// Fixed leading CSV columns; one slack:<check> column follows per enabled check.
const std::vector<std::string>& trace_base_columns();

/// '#' metadata lines, the header, then one row per record; empty cells for missing values.
void write_trace_csv(std::ostream& out, const Trace& trace);
Trace read_trace_csv(std::istream& in);
/// Writes to a temporary sibling and renames it into place.
void save_trace_csv(const std::string& path, const Trace& trace);
Trace load_trace_csv(const std::string& path);

/// Shortest decimal that reads back to the same double (17 significant digits).
std::string format_double(double x);

} // namespace pglab
