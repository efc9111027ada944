#pragma once

#include "repro_lens/notebook.hpp"

#include <random>
#include <vector>

namespace testkit {

// Short text drawn from a token set rich in newlines, ANSI escapes and blanks.
std::string random_text(std::mt19937_64& rng);

// 0-5 outputs; every MIME payload is text. An error, if any, comes last.
std::vector<repro_lens::nb::Output> random_text_outputs(std::mt19937_64& rng);

// A list that is often equivalent under normalization (re-chunked streams,
// CRLF, trailing blanks, colour codes) and sometimes really different.
std::vector<repro_lens::nb::Output> variant_of(std::mt19937_64& rng,
                                               const std::vector<repro_lens::nb::Output>& outputs);

}  // namespace testkit
