#include "generators.hpp"

namespace testkit {

using namespace repro_lens::nb;

namespace {

int roll(std::mt19937_64& rng, int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

const std::vector<std::string> kTokens = {"a",   "b",        "x y",       "0",         "\n",   "\r\n", "\r",
                                          " ",   "\t",       "\x1b[31m",  "\x1b[0m",   "\x1b", "[",    "m",
                                          "\xc3\xa9", "\x1b[1;32m", "line\n", "  \n", "\f"};

MimeBundle text_bundle(std::mt19937_64& rng) {
  MimeBundle b;
  b["text/plain"] = random_text(rng);
  if (roll(rng, 3) == 0) b["text/html"] = "<p>" + random_text(rng) + "</p>";
  return b;
}

}  // namespace

std::string random_text(std::mt19937_64& rng) {
  std::string s;
  int n = roll(rng, 12);
  for (int i = 0; i < n; ++i) s += kTokens[roll(rng, static_cast<int>(kTokens.size()))];
  return s;
}

std::vector<Output> random_text_outputs(std::mt19937_64& rng) {
  std::vector<Output> out;
  int n = roll(rng, 6);
  for (int i = 0; i < n; ++i) {
    switch (roll(rng, 5)) {
      case 0:
      case 1: out.push_back(StreamOutput{roll(rng, 3) ? StreamName::Stdout : StreamName::Stderr, random_text(rng)}); break;
      case 2: out.push_back(ExecuteResultOutput{text_bundle(rng), i + 1}); break;
      case 3: out.push_back(DisplayDataOutput{text_bundle(rng)}); break;
      default:
        if (i == n - 1) {
          out.push_back(ErrorOutput{roll(rng, 2) ? "ValueError" : "KeyError", random_text(rng), {"tb"}});
        } else {
          out.push_back(StreamOutput{StreamName::Stdout, random_text(rng)});
        }
    }
  }
  return out;
}

std::vector<Output> variant_of(std::mt19937_64& rng, const std::vector<Output>& outputs) {
  int mode = roll(rng, 10);
  if (mode < 3) return outputs;
  std::vector<Output> out;
  if (mode < 7) {
    for (const auto& o : outputs) {
      const auto* s = std::get_if<StreamOutput>(&o);
      if (!s) {
        out.push_back(o);
        continue;
      }
      std::string text = s->text;
      if (roll(rng, 2)) {
        std::string crlf;
        for (std::size_t i = 0; i < text.size(); ++i) {
          if (text[i] == '\n' && (i == 0 || text[i - 1] != '\r')) crlf += '\r';
          crlf += text[i];
        }
        text = crlf;
      }
      if (roll(rng, 3) == 0) text += " \t";
      if (roll(rng, 3) == 0) text = "\x1b[0m" + text;
      // Re-chunk into consecutive same-name streams.
      std::size_t pos = 0;
      while (pos < text.size()) {
        std::size_t len = 1 + roll(rng, 5);
        out.push_back(StreamOutput{s->name, text.substr(pos, len)});
        pos += len;
      }
      if (text.empty()) out.push_back(StreamOutput{s->name, ""});
    }
    return out;
  }
  out = outputs;
  switch (roll(rng, 4)) {
    case 0:
      if (!out.empty()) out.erase(out.begin() + roll(rng, static_cast<int>(out.size())));
      break;
    case 1: out.push_back(StreamOutput{StreamName::Stdout, random_text(rng)}); break;
    case 2:
      for (auto& o : out) {
        if (auto* s = std::get_if<StreamOutput>(&o)) {
          s->text += "z";
          break;
        }
      }
      break;
    default:
      for (auto& o : out) {
        if (auto* r = std::get_if<ExecuteResultOutput>(&o)) {
          r->data["text/plain"] = r->data["text/plain"].get<std::string>() + "1";
          break;
        }
        if (auto* e = std::get_if<ErrorOutput>(&o)) e->ename = "TypeError";
      }
  }
  return out;
}

}  // namespace testkit
