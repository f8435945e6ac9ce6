#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>

namespace fusion {

/// Substitutes {name} placeholders from vars in a single pass over the
/// template. Substituted values are inserted raw and never re-scanned, so
/// candidate texts containing braces cannot trigger further substitution.
/// Placeholders with no binding are kept literally.
inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        char c = tmpl[i];
        if (c != '{') {
            out.push_back(c);
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < tmpl.size() && (std::isalnum(static_cast<unsigned char>(tmpl[j])) || tmpl[j] == '_')) ++j;
        if (j < tmpl.size() && tmpl[j] == '}' && j > i + 1) {
            std::string key(tmpl.substr(i + 1, j - i - 1));
            auto it = vars.find(key);
            if (it != vars.end()) {
                out.append(it->second);
                i = j + 1;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

namespace templates {

/// Fusion instruction. Placeholders: {language}, {prompt}, {generations}.
inline constexpr std::string_view kFusion =
    R"(Based on the provided Instruction and Generated Texts in {language}, fuse them into a better generation that combines the strength of each of them. Do so in two steps:

First, compare the Generated Text with a focus on what sets them apart in terms of content, language quality and responsibility, highlighting strengths and weaknesses.
Second, fuse them into a new final generation that combines the best aspects of each of them while avoiding the weaknesses.

The fused generation should be adequately responding to the instruction, sound natural to a native speaker, and be focused on conveying the most relevant and accurate information in a responsible and ethical way.

Output Format

Comparison: (short explanation of the strengths and weaknesses of each generation)

Answer: [[ The final fused generation ]]

Context

Instruction

{prompt}

Generated Texts

{generations}

Please analyse the Generated Texts, discarding any unsafe or unethical generations and provide your fused text. Remember to stick to the requested Output Format, providing first a short explanation and then putting the final fused generation inside double brackets [[]].)";

/// 1-5 scalar rating instruction. Placeholders: {language}, {message}, {generation}.
inline constexpr std::string_view kGenerativeRater =
    R"(Please act as a fair judge. Based on the provided Instruction and Generated Text, analyse the Generated Text and provide a 1-5 integer score. The given instruction is in {language} and the response should also be in {language}
Your selection should be based on your judgment as well as the following guidelines for each possible score:

1. The Generated Text is unintelligibly written (incomplete sentences, leaps in logic, flagrant mechanical errors) or has majorly incorrect or unverifiable information.

2. The Generated Text is occasionally difficult to understand, dotted with minor factual or mechanical errors, or missing crucial formatting elements.

3. The Generated Text expresses useful information, is readable, has no factual errors, and has no more than a minor mechanical error or two. Though it may be informative to those unfamiliar with the subject matter, it is not overly insightful, engaging, or likely to hold up to expert scrutiny.

4. The Generated Text clearly expresses useful information at an expert level, is readable, and has no factual or mechanical errors. It could just use a quick adjustment with tone or length.

5. The Generated Text clearly expresses useful information at an expert level, is readable, has no factual or mechanical errors, and is the perfect length and tone with regard to the prompt.

Output Format

Analysis: xxx
Answer: [[ SCORE ]] (this should be an integer from 1-5 and nothing else; the score should be enclosed in double brackets as indicated)

Evaluation Information

Instruction

{message}

Generated Text

{generation}

Please analyse the Generated Text and provide a 1-5 integer score according to the guidelines. Remember to stick to the requested Output Format, providing analysis and putting your final score (an INTEGER in 1-5) inside double brackets [[]].)";

/// Generic head-to-head judge template. This is a stand-in default, not a
/// published evaluation prompt; supply your own file for serious comparisons.
/// Placeholders: {prompt}, {response_a}, {response_b}.
inline constexpr std::string_view kPairwiseJudge =
    R"(Please act as an impartial judge and evaluate the quality of the two responses below to the user instruction. Compare them for correctness, helpfulness, completeness and language quality. Do not let the order of presentation, response length, or assistant names influence your decision.

Instruction

{prompt}

Response A

{response_a}

Response B

{response_b}

First write a short comparison of the two responses. Then output your final verdict inside double brackets: [[A]] if Response A is better, [[B]] if Response B is better, or [[TIE]] if both are equally good.)";

/// Grade-school math instruction with a final "Answer:" line.
inline constexpr std::string_view kMathTask =
    R"(Solve this math problem. Give the reasoning steps before giving the final answer on the last line by itself in the format of "Answer:". Do not add anything other than the integer answer after "Answer":

{problem})";

/// Translation instruction. Placeholders: {src_lang}, {tgt_lang}, {tgt_country}, {source_text}.
inline constexpr std::string_view kTranslationTask =
    R"(You are a professional {src_lang} to {tgt_lang} translator, tasked with providing translations suitable for use in {tgt_lang} ({tgt_country}). Your goal is to accurately convey the meaning and nuances of the original {src_lang} text while adhering to {tgt_lang} grammar, vocabulary, and cultural sensitivities. Produce only the {tgt_lang} translation, without any additional explanations or commentary. Please translate the following {src_lang} text into {tgt_lang} ({tgt_country}):

{source_text})";

} // namespace templates

} // namespace fusion
