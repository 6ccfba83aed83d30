#include "milseg/aggregation.hpp"

namespace milseg {

std::string to_string(AggregatorVariant v) {
  switch (v) {
    case AggregatorVariant::Sum:
      return "sum";
    case AggregatorVariant::Max:
      return "max";
    case AggregatorVariant::Lse:
      return "lse";
  }
  return "?";
}

AggregatorVariant parse_aggregator(const std::string& name) {
  if (name == "sum") return AggregatorVariant::Sum;
  if (name == "max") return AggregatorVariant::Max;
  if (name == "lse") return AggregatorVariant::Lse;
  throw std::invalid_argument("unknown aggregation '" + name + "' (expected sum, max or lse)");
}

}  // namespace milseg
