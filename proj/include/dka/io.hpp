#pragma once

// CSV and JSON emission. Numbers are written with 17 significant digits and
// '\n' line endings so that outputs are byte-stable across runs.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iteration.hpp"
#include "rates.hpp"
#include "sphere_spectral.hpp"

namespace dka {

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Minimal CSV writer; cells are numbers or bare identifiers, so no quoting.
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& header(const std::vector<std::string>& cols) {
        row_strings(cols);
        return *this;
    }

    CsvWriter& cell(double v) { return raw(format_number(v)); }
    CsvWriter& cell(long v) { return raw(std::to_string(v)); }
    CsvWriter& cell(int v) { return raw(std::to_string(v)); }
    CsvWriter& cell(const std::string& s) { return raw(s); }
    CsvWriter& cell(const char* s) { return raw(s); }

    CsvWriter& end_row() {
        os_ << '\n';
        first_ = true;
        return *this;
    }

private:
    CsvWriter& raw(const std::string& s) {
        if (!first_) os_ << ',';
        os_ << s;
        first_ = false;
        return *this;
    }

    void row_strings(const std::vector<std::string>& cells) {
        for (const auto& c : cells) raw(c);
        end_row();
    }

    std::ostream& os_;
    bool first_ = true;
};

inline void write_profile_csv(std::ostream& os, const ProfileTable& table) {
    CsvWriter csv(os);
    csv.header({"t", "value", "converged_at", "profile_kind"});
    for (std::size_t i = 0; i < table.grid.size(); ++i)
        csv.cell(table.grid[i]).cell(table.values[i]).cell(table.converged_at[i]).cell(to_string(table.kind)).end_row();
}

inline void write_spectral_csv(std::ostream& os, const SpectralCoeffs& sc) {
    CsvWriter csv(os);
    csv.header({"l", "D_l"});
    for (std::size_t l = 0; l < sc.coeffs.size(); ++l) csv.cell(static_cast<long>(l)).cell(sc.coeffs[l]).end_row();
}

/// JSON numbers cannot hold infinities; those become the string "inf".
inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    return format_number(v);
}

inline nlohmann::json to_json(const RateModel& model) {
    nlohmann::json j;
    j["which"] = to_string(model.which);
    j["profile_kind"] = to_string(model.profile_kind);
    j["h"] = model.h ? nlohmann::json(*model.h) : nlohmann::json(nullptr);
    const auto m = model.matrix.rows();
    j["size"] = m;
    std::vector<double> flat;
    for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c) flat.push_back(model.matrix(r, c));
    j["matrix"] = flat;
    std::vector<double> eig(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size());
    j["eigenvalues"] = eig;
    j["rank"] = model.rank;
    return j;
}

inline nlohmann::json to_json(const RegularityFit& fit) {
    return {{"c", fit.c}, {"rho", fit.rho}, {"r_squared", fit.r_squared}, {"points", fit.steps.size()}};
}

inline nlohmann::json to_json(const RegimeReport& rep) {
    nlohmann::json j;
    j["kprime1"] = rep.kprime1;
    j["regime"] = to_string(rep.regime);
    j["symmetry_set"] = rep.symmetry ? nlohmann::json(to_string(*rep.symmetry)) : nlohmann::json(nullptr);
    j["c"] = rep.c ? nlohmann::json(*rep.c) : nlohmann::json(nullptr);
    j["rho"] = rep.rho ? nlohmann::json(*rep.rho) : nlohmann::json(nullptr);
    j["regularity_source"] = rep.regularity_source;
    j["h"] = rep.h ? nlohmann::json(*rep.h) : nlohmann::json(nullptr);
    j["t_star"] = rep.t_star ? nlohmann::json(*rep.t_star) : nlohmann::json(nullptr);
    j["fit"] = rep.fit ? to_json(*rep.fit) : nlohmann::json(nullptr);
    if (!rep.fit_failure.empty()) j["fit_failure"] = rep.fit_failure;
    j["kappa_at_minus_one"] = rep.kappa_at_minus_one;
    j["oscillatory_boundary"] = rep.oscillatory_boundary;
    j["affine_warning"] = rep.affine_warning;
    return j;
}

}  // namespace dka
