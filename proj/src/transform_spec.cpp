#include "defectloop/transform_spec.hpp"

#include "defectloop/error.hpp"

#include <cmath>
#include <sstream>

namespace defectloop {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvalidArgument, what);
}

}  // namespace

bool is_photometric(const TransformSpec& spec) {
  return std::holds_alternative<GaussianNoise>(spec) || std::holds_alternative<JpegCompress>(spec) ||
         std::holds_alternative<Blur>(spec) || std::holds_alternative<Sharpen>(spec) ||
         std::holds_alternative<Emboss>(spec);
}

void validate_transform(const TransformSpec& spec) {
  std::visit(overloaded{
                 [](const Rotate90& t) { require(t.quarter_turns >= 1 && t.quarter_turns <= 3, "Rotate90 turns in 1..3"); },
                 [](const RotateSmall& t) { require(std::abs(t.angle_degrees) <= 45.0, "RotateSmall angle within 45 degrees"); },
                 [](const Shear& t) { require(std::abs(t.factor) <= 1.0, "Shear factor within [-1,1]"); },
                 [](const FlipH&) {},
                 [](const FlipV&) {},
                 [](const Scale& t) { require(t.factor > 0.0, "Scale factor must be positive"); },
                 [](const Translate&) {},
                 [](const GaussianNoise& t) { require(t.sigma >= 0.0, "GaussianNoise sigma must be >= 0"); },
                 [](const JpegCompress& t) { require(t.quality >= 1 && t.quality <= 100, "JpegCompress quality in 1..100"); },
                 [](const Blur& t) { require(t.radius >= 1, "Blur radius must be >= 1"); },
                 [](const Sharpen&) {},
                 [](const Emboss&) {},
             },
             spec);
}

std::string describe(const TransformSpec& spec) {
  std::ostringstream os;
  std::visit(overloaded{
                 [&](const Rotate90& t) { os << "Rotate90(" << t.quarter_turns << ")"; },
                 [&](const RotateSmall& t) { os << "RotateSmall(" << t.angle_degrees << ")"; },
                 [&](const Shear& t) { os << "Shear(" << t.factor << ")"; },
                 [&](const FlipH&) { os << "FlipH"; },
                 [&](const FlipV&) { os << "FlipV"; },
                 [&](const Scale& t) { os << "Scale(" << t.factor << ")"; },
                 [&](const Translate& t) { os << "Translate(" << t.dx << "," << t.dy << ")"; },
                 [&](const GaussianNoise& t) { os << "GaussianNoise(" << t.sigma << ",seed=" << t.seed << ")"; },
                 [&](const JpegCompress& t) { os << "JpegCompress(" << t.quality << ")"; },
                 [&](const Blur& t) { os << "Blur(" << t.radius << ")"; },
                 [&](const Sharpen&) { os << "Sharpen"; },
                 [&](const Emboss&) { os << "Emboss"; },
             },
             spec);
  return os.str();
}

nlohmann::json transform_to_json(const TransformSpec& spec) {
  using nlohmann::json;
  return std::visit(overloaded{
                        [](const Rotate90& t) { return json{{"kind", "Rotate90"}, {"quarter_turns", t.quarter_turns}}; },
                        [](const RotateSmall& t) { return json{{"kind", "RotateSmall"}, {"angle_degrees", t.angle_degrees}}; },
                        [](const Shear& t) { return json{{"kind", "Shear"}, {"factor", t.factor}}; },
                        [](const FlipH&) { return json{{"kind", "FlipH"}}; },
                        [](const FlipV&) { return json{{"kind", "FlipV"}}; },
                        [](const Scale& t) { return json{{"kind", "Scale"}, {"factor", t.factor}}; },
                        [](const Translate& t) { return json{{"kind", "Translate"}, {"dx", t.dx}, {"dy", t.dy}}; },
                        [](const GaussianNoise& t) {
                          return json{{"kind", "GaussianNoise"}, {"sigma", t.sigma}, {"seed", t.seed}};
                        },
                        [](const JpegCompress& t) { return json{{"kind", "JpegCompress"}, {"quality", t.quality}}; },
                        [](const Blur& t) { return json{{"kind", "Blur"}, {"radius", t.radius}}; },
                        [](const Sharpen&) { return json{{"kind", "Sharpen"}}; },
                        [](const Emboss&) { return json{{"kind", "Emboss"}}; },
                    },
                    spec);
}

TransformSpec transform_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    TransformSpec spec;
    if (kind == "Rotate90") spec = Rotate90{j.at("quarter_turns").get<int>()};
    else if (kind == "RotateSmall") spec = RotateSmall{j.at("angle_degrees").get<double>()};
    else if (kind == "Shear") spec = Shear{j.at("factor").get<double>()};
    else if (kind == "FlipH") spec = FlipH{};
    else if (kind == "FlipV") spec = FlipV{};
    else if (kind == "Scale") spec = Scale{j.at("factor").get<double>()};
    else if (kind == "Translate") spec = Translate{j.at("dx").get<int>(), j.at("dy").get<int>()};
    else if (kind == "GaussianNoise") spec = GaussianNoise{j.at("sigma").get<double>(), j.value("seed", std::uint64_t{0})};
    else if (kind == "JpegCompress") spec = JpegCompress{j.at("quality").get<int>()};
    else if (kind == "Blur") spec = Blur{j.at("radius").get<int>()};
    else if (kind == "Sharpen") spec = Sharpen{};
    else if (kind == "Emboss") spec = Emboss{};
    else throw Error(Errc::InvalidArgument, "unknown transform kind '" + kind + "'");
    validate_transform(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("malformed transform: ") + e.what());
  }
}

nlohmann::json chain_to_json(const TransformChain& chain) {
  auto out = nlohmann::json::array();
  for (const auto& t : chain) out.push_back(transform_to_json(t));
  return out;
}

TransformChain chain_from_json(const nlohmann::json& j) {
  TransformChain chain;
  if (j.is_object()) {
    chain.push_back(transform_from_json(j));
    return chain;
  }
  for (const auto& t : j) chain.push_back(transform_from_json(t));
  return chain;
}

}  // namespace defectloop
