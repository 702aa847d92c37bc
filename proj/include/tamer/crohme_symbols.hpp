#pragma once

#include <array>
#include <string_view>

namespace tamer {

// Default symbol set (CROHME-style), without the reserved ids. Kept in sync
// with assets/crohme_vocab.txt; the vocab test checks the two agree.
inline constexpr std::array<std::string_view, 111> kCrohmeSymbols = {
    "!", "(", ")", "+", ",", "-", ".", "/",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "<", "=", ">", "A", "B", "C", "E", "F", "G", "H", "I", "L", "M", "N",
    "P", "R", "S", "T", "V", "X", "Y", "[", "\\Delta", "\\alpha", "\\beta",
    "\\cdot", "\\cos", "\\div", "\\exists", "\\forall", "\\frac", "\\gamma",
    "\\geq", "\\gt", "\\in", "\\infty", "\\int", "\\lambda", "\\ldots",
    "\\leq", "\\lim", "\\log", "\\lt", "\\mu", "\\neq", "\\phi", "\\pi",
    "\\pm", "\\prime", "\\rightarrow", "\\sigma", "\\sin", "\\sqrt",
    "\\sum", "\\tan", "\\theta", "\\times", "\\{", "\\}", "]", "^", "_",
    "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n",
    "o", "p", "q", "r", "s", "t", "u", "v", "w", "x", "y", "z", "{", "|",
    "}", "\\prod", "\\limits",
};

}  // namespace tamer
