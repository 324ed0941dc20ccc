#pragma once

#include <algorithm>
#include <string>
#include <string_view>

#include "needlestack/error.hpp"
#include "needlestack/world/oracle.hpp"

namespace needlestack::eval {

namespace prompt_detail {

inline constexpr std::string_view qa1_template = R"NSP(I will give you context with the facts about positions of different persons hidden in some random text and a question. You need to answer the question based only on the information from the facts. If a person was in different locations, use the latest location to answer the question.

<example>
Charlie went to the hallway. Judith come back to the kitchen. Charlie travelled to balcony. Where is Charlie?
Answer: The most recent location of Charlie is balcony.
</example>

<example>
Alan moved to the garage. Charlie went to the beach. Alan went to the shop. Rouse travelled to balcony. Where is Alan?
Answer: The most recent location of Alan is shop.
</example>

<context>
{qa1 query with noise}
</context>

QUESTION: {qa1 question}

Always return your answer in the following format: The most recent location of 'person' is 'location'. Do not write anything else after that.
)NSP";

inline constexpr std::string_view qa2_template = R"NSP(I give you context with the facts about locations and actions of different persons hidden in some random text and a question. You need to answer the question based only on the information from the facts. 

If a person got an item in the first location and travelled to the second location the item is also in the second location.
If a person dropped an item in the first location and moved to the second location the item remains in the first location.

<example>
Charlie went to the kitchen. Charlie got a bottle. Charlie moved to the balcony. Where is the bottle?
Answer: The bottle is in the balcony.
</example>

<example>
Alan moved to the garage. Alan got a screw driver. Alan moved to the kitchen. Where is the screw driver?
Answer: The screw driver is in the kitchen.
</example>

<context>
{qa2 query with noise}
</context>

QUESTION: {qa2 question}

Always return you answer in the following format: The 'item' is in 'location'. Do not write anything else after that.
)NSP";

inline constexpr std::string_view qa3_template = R"NSP(I give you context with the facts about locations and actions of different persons hidden in some random text and a question.
You need to answer the question based only on the information from the facts.

If a person got an item in the first location and travelled to the second location the item is also in the second location.
If a person dropped an item in the first location and moved to the second location the item remains in the first location

<example>
John journeyed to the bedroom.Mary grabbed the apple. Mary went back to the bathroom. Daniel journeyed to the bedroom. Daniel moved to the garden. Mary travelled to the kitchen. Where was the apple before the kitchen?
Answer: Before the kitchen the apple was in the bathroom.
</example>

<example>
John went back to the bedroom. John went back to the garden. John went back to the kitchen. Sandra took the football. Sandra travelled to the garden. Sandra journeyed to the bedroom. Where was the football before the bedroom?
Answer: Before the kitchen the football was in the garden.
</example>
                    
<context>
{qa3 query with noise}
</context>
                    
QUESTION: {qa3 question}

Always return you answer in the following format: Before the $location_1& the $item$ was in the $location_2$. Do not write anything else after that.
)NSP";

inline constexpr std::string_view qa4_template = R"NSP(I will give you context with the facts about different people, their location and actions, hidden in some random text and a question.
You need to answer the question based only on the information from the facts.

<example>
The hallway is south of the kitchen. The bedroom is north of the kitchen. What is the kitchen south of?
Answer: bedroom              
</example>

<example>
The garden is west of the bedroom. The bedroom is west of the kitchen. What is west of the bedroom?
Answer: garden
</example>

<context>
{qa4 query with noise}
</context>

QUESTION: {qa4 question}

Your answer should contain only one word - location. Do not write anything else after that
)NSP";

inline constexpr std::string_view qa5_template = R"NSP(I will give you context with the facts about locations and their relations hidden in some random text and a question. You need to answer the question based only on the information from the facts.

<example>
Mary picked up the apple there. Mary gave the apple to Fred. Mary moved to the bedroom. Bill took the milk there. Who did Mary give the apple to?
Answer: Fred        
</example>

<example>
1 Jeff took the football there. Jeff passed the football to Fred. Jeff got the milk there. Bill travelled to the bedroom. Who gave the football?
Answer: Jeff
</example>

<example>
Fred picked up the apple there. Fred handed the apple to Bill. Bill journeyed to the bedroom. Jeff went back to the garden. What did Fred give to Bill?
Answer: apple
</example>

<context>
{qa5 query with noise}
</context>
                        
QUESTION: {qa5 question}

Your answer should contain only one word. Do not write anything else after that. Do not explain your answer.
)NSP";
/// Replaces placeholders in one left-to-right pass, so substituted text is
/// never rescanned.
inline std::string substitute(std::string_view tmpl, std::string_view key_a, std::string_view value_a,
                              std::string_view key_b, std::string_view value_b) {
    std::string out;
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t a = tmpl.find(key_a, pos), b = tmpl.find(key_b, pos);
        const std::size_t next = std::min(a, b);
        if (next == std::string_view::npos) break;
        out.append(tmpl.substr(pos, next - pos));
        if (next == a) {
            out.append(value_a);
            pos = a + key_a.size();
        } else {
            out.append(value_b);
            pos = b + key_b.size();
        }
    }
    if (pos < tmpl.size()) out.append(tmpl.substr(pos));
    return out;
}

}  // namespace prompt_detail

/// The verbatim prompt template for a task, with its two placeholders.
inline std::string_view prompt_template(world::TaskId task) {
    switch (task) {
        case world::TaskId::qa1: return prompt_detail::qa1_template;
        case world::TaskId::qa2: return prompt_detail::qa2_template;
        case world::TaskId::qa3: return prompt_detail::qa3_template;
        case world::TaskId::qa4: return prompt_detail::qa4_template;
        case world::TaskId::qa5: return prompt_detail::qa5_template;
    }
    throw ConfigError("build_prompt: unknown task");
}

/// Substitutes the noisy input (context followed by the question) and the
/// repeated question into the task's template.
inline std::string build_prompt(world::TaskId task, std::string_view input, std::string_view question) {
    const std::string name = world::to_string(task);
    return prompt_detail::substitute(prompt_template(task), "{" + name + " query with noise}", input,
                                     "{" + name + " question}", question);
}

inline std::string build_prompt(const std::string& task, std::string_view input, std::string_view question) {
    return build_prompt(world::parse_task(task), input, question);
}

}  // namespace needlestack::eval
