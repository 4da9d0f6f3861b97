#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tclagg/chain.hpp"

namespace tclagg {

inline constexpr const char* version_string = "1.0.0";

/// Trajectory CSVs use 12 significant digits; chain files use 17 so the
/// matrix round-trips bit-exactly through decimal text.
inline std::string format_double(double v, int digits = 12) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

/// One-line-header CSV of equally long columns.
inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
    if (header.size() != columns.size())
        throw std::invalid_argument("write_csv: header/column count mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    for (std::size_t c = 0; c < header.size(); ++c)
        out << header[c] << (c + 1 < header.size() ? "," : "\n");
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& col : columns)
        if (col.size() != rows) throw std::invalid_argument("write_csv: ragged columns");
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < columns.size(); ++c)
            out << format_double(columns[c][r]) << (c + 1 < columns.size() ? "," : "\n");
}

/// FNV-1a over the canonical parameter rendering; identifies the dynamics a
/// chain file was built from.
inline std::uint64_t params_hash(const TclParams& p) {
    std::ostringstream os;
    os << format_double(p.theta_s, 17) << '|' << format_double(p.delta, 17) << '|'
       << format_double(p.theta_a, 17) << '|' << format_double(p.R, 17) << '|'
       << format_double(p.C, 17) << '|' << format_double(p.P_rate, 17) << '|'
       << format_double(p.eta, 17) << '|' << format_double(p.h_seconds, 17) << '|'
       << format_double(p.sigma, 17);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : os.str()) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/**
 * Chain matrix export: two comment header lines carrying the dimensions and
 * parameter hash, then the dense rows as plain CSV.
 */
inline void write_chain(std::ostream& out, const MarkovChainModel& model) {
    out << "# tclagg-chain v1\n";
    out << "# kind=" << (model.kind == ChainKind::Stochastic ? "stochastic" : "deterministic")
        << " n=" << model.n();
    if (model.kind == ChainKind::Stochastic)
        out << " l=" << model.partition->l_steps << " m=" << model.partition->m_steps;
    char hash[20];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(params_hash(model.params)));
    out << " params_hash=" << hash << "\n";
    for (int i = 0; i < model.dim(); ++i)
        for (int j = 0; j < model.dim(); ++j)
            out << format_double(model.P(i, j), 17) << (j + 1 < model.dim() ? "," : "\n");
}

struct ChainFile {
    Eigen::MatrixXd P;
    std::map<std::string, std::string> header;
};

inline ChainFile read_chain(std::istream& in) {
    ChainFile file;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# tclagg-chain", 0) != 0)
        throw std::runtime_error("read_chain: missing chain header");
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0)
        throw std::runtime_error("read_chain: missing metadata line");
    std::istringstream meta(line.substr(2));
    std::string token;
    while (meta >> token) {
        const auto eq = token.find('=');
        if (eq != std::string::npos)
            file.header[token.substr(0, eq)] = token.substr(eq + 1);
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("read_chain: no matrix rows");
    const std::size_t dim = rows.size();
    file.P.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
        if (rows[i].size() != dim)
            throw std::runtime_error("read_chain: matrix is not square");
        for (std::size_t j = 0; j < dim; ++j)
            file.P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    if (max_row_defect(file.P) > 1e-9)
        throw std::runtime_error("read_chain: rows are not stochastic");
    return file;
}

} // namespace tclagg
