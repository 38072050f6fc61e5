// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace slimconv {

enum class ErrorKind {
  Dimension,
  Contract,
  Config,
  Index,
  Numeric,
  Format,
  Integrity,
  Io,
  SearchInfeasible,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SLIMCONV_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

SLIMCONV_DEFINE_ERROR(DimensionError, Dimension)
SLIMCONV_DEFINE_ERROR(ContractError, Contract)
SLIMCONV_DEFINE_ERROR(ConfigError, Config)
SLIMCONV_DEFINE_ERROR(IndexError, Index)
SLIMCONV_DEFINE_ERROR(NumericError, Numeric)
SLIMCONV_DEFINE_ERROR(FormatError, Format)
SLIMCONV_DEFINE_ERROR(IntegrityError, Integrity)
SLIMCONV_DEFINE_ERROR(IoError, Io)
SLIMCONV_DEFINE_ERROR(SearchInfeasibleError, SearchInfeasible)

#undef SLIMCONV_DEFINE_ERROR

}  // namespace slimconv
