#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgpronet/error.hpp"
#include "cgpronet/io.hpp"
#include "cgpronet/model.hpp"

namespace cgp {

using AnyModel = std::variant<CgpParams, MultiHorizonParams, HeatParams, VarParams>;

inline ModelKind model_kind(const AnyModel& m) {
  if (std::holds_alternative<CgpParams>(m)) return ModelKind::base;
  if (const auto* mh = std::get_if<MultiHorizonParams>(&m)) return to_model_kind(mh->variant);
  if (std::holds_alternative<HeatParams>(m)) return ModelKind::heat;
  return ModelKind::var;
}

inline std::size_t model_parameter_count(const AnyModel& m) {
  return std::visit([](const auto& p) { return p.parameter_count(); }, m);
}

inline std::size_t model_ar_order(const AnyModel& m) {
  return std::visit([](const auto& p) { return p.ar_order(); }, m);
}

inline std::size_t model_horizons(const AnyModel& m) {
  return std::visit([](const auto& p) { return horizons_of(p); }, m);
}

namespace detail {

inline nlohmann::json thetas_json(const std::vector<PolyCoeffs>& thetas) {
  auto out = nlohmann::json::array();
  for (const auto& c : thetas) out.push_back(c.coeffs);
  return out;
}

inline std::vector<PolyCoeffs> thetas_from_json(const nlohmann::json& j) {
  std::vector<PolyCoeffs> out;
  for (const auto& c : j) out.emplace_back(c.get<std::vector<double>>());
  return out;
}

}  // namespace detail

/// Flat document; doubles are written in shortest round-trip form.
inline nlohmann::json checkpoint_to_json(const AnyModel& model) {
  nlohmann::json j;
  j["variant"] = std::string(to_string(model_kind(model)));
  j["M"] = model_ar_order(model);
  j["H"] = model_horizons(model);
  j["parameter_count"] = model_parameter_count(model);
  std::visit(
      [&j](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, CgpParams>) {
          j["activation"] = std::string(to_string(p.activation));
          j["alphas"] = p.alphas;
          j["thetas"] = detail::thetas_json(p.thetas);
        } else if constexpr (std::is_same_v<P, MultiHorizonParams>) {
          j["activation"] = std::string(to_string(p.base.activation));
          j["alphas"] = p.base.alphas;
          j["thetas"] = detail::thetas_json(p.base.thetas);
          j["head"] = p.head;
          auto per = nlohmann::json::array();
          for (const auto& set : p.per_horizon_thetas) per.push_back(detail::thetas_json(set));
          j["per_horizon_thetas"] = per;
        } else if constexpr (std::is_same_v<P, HeatParams>) {
          j["activation"] = std::string(to_string(p.activation));
          j["alphas"] = p.alphas;
          std::vector<double> scales, times;
          for (const auto& h : p.heat) {
            scales.push_back(h.scale);
            times.push_back(h.time);
          }
          j["heat_scales"] = scales;
          j["heat_times"] = times;
        } else {
          j["activation"] = "identity";
          j["N"] = p.num_nodes();
          auto mats = nlohmann::json::array();
          for (const auto& r : p.coeffs) mats.push_back(std::vector<double>(r.data(), r.data() + r.size()));
          j["var_coeffs"] = mats;
        }
      },
      model);
  return j;
}

inline AnyModel checkpoint_from_json(const nlohmann::json& j) {
  try {
    const ModelKind kind = parse_model_kind(j.at("variant").get<std::string>());
    const auto m = j.at("M").get<std::size_t>();
    const Activation act = parse_activation(j.value("activation", std::string("tanh")));
    AnyModel out;
    switch (kind) {
      case ModelKind::base: {
        CgpParams p;
        p.activation = act;
        p.alphas = j.at("alphas").get<std::vector<double>>();
        p.thetas = detail::thetas_from_json(j.at("thetas"));
        p.validate();
        out = p;
        break;
      }
      case ModelKind::mlp_head:
      case ModelKind::adaptive:
      case ModelKind::shared: {
        MultiHorizonParams p;
        p.variant = to_multi_horizon(kind);
        p.horizons = j.at("H").get<std::size_t>();
        p.base.activation = act;
        p.base.alphas = j.at("alphas").get<std::vector<double>>();
        p.base.thetas = detail::thetas_from_json(j.at("thetas"));
        p.head = j.value("head", std::vector<double>{});
        if (j.contains("per_horizon_thetas"))
          for (const auto& set : j.at("per_horizon_thetas")) p.per_horizon_thetas.push_back(detail::thetas_from_json(set));
        p.validate();
        out = p;
        break;
      }
      case ModelKind::heat: {
        HeatParams p;
        p.activation = act;
        p.alphas = j.at("alphas").get<std::vector<double>>();
        const auto scales = j.at("heat_scales").get<std::vector<double>>();
        const auto times = j.at("heat_times").get<std::vector<double>>();
        detail::require(scales.size() == p.alphas.size() && times.size() == p.alphas.size(),
                        "checkpoint: heat coefficient count mismatch");
        for (std::size_t i = 0; i < scales.size(); ++i) p.heat.push_back({scales[i], times[i]});
        p.validate();
        out = p;
        break;
      }
      case ModelKind::var: {
        const auto n = j.at("N").get<std::size_t>();
        VarParams p = VarParams::initial(m, n);
        const auto& mats = j.at("var_coeffs");
        detail::require(mats.size() == m, "checkpoint: expected M VAR matrices");
        for (std::size_t i = 0; i < m; ++i) {
          const auto flat = mats[i].get<std::vector<double>>();
          detail::require(flat.size() == n * n, "checkpoint: VAR matrix has the wrong size");
          p.coeffs[i] = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        }
        out = p;
        break;
      }
    }
    detail::require(model_ar_order(out) == m, "checkpoint: M does not match the coefficients");
    if (j.contains("parameter_count"))
      detail::require(j.at("parameter_count").get<std::size_t>() == model_parameter_count(out),
                      "checkpoint: parameter_count does not match the coefficients");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const AnyModel& model) {
  io::write_atomic(path, checkpoint_to_json(model).dump(2) + "\n");
}

inline AnyModel load_checkpoint(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what(), 0, e.byte);
  }
  return checkpoint_from_json(j);
}

}  // namespace cgp
