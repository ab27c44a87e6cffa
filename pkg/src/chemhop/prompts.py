"""Prompt templates for every LLM-facing pipeline stage.

All templates are versioned as a unit; run manifests record
``PROMPT_VERSION`` so datasets can be traced to the prompt set that
produced them.
"""

from __future__ import annotations

from typing import Optional, Sequence

PROMPT_VERSION = "1"

ENTITY_VERIFICATION_TEMPLATE = """\
You are a chemistry expert specializing in entity recognition. Your task is to validate and filter the extracted entities, ensuring they are chemically meaningful based on the provided text. Remove any irrelevant terms, including general descriptors, numerical values, reaction conditions, and vague terms.

Entities Extracted by NER:
{entities}

Text for Context:
{text}

Criteria for Valid Entities:
[v] Chemical compounds (e.g., "HCl", "Sodium hydroxide", "Ethanol", "Benzene")
[v] Chemical elements (e.g., "Carbon", "Oxygen", "Cesium")
[v] Specific catalysts, solvents, reagents (e.g., "Cs2CO3", "Toluene", "Palladium")

Remove the Following Types of Entities:
[x] Generic terms (e.g., "Reaction", "Solvent", "Acid", "Base", "Solution")
[x] Experimental conditions (e.g., "pH", "Temperature", "2 M", "Strong acid")
[x] Measurement terms (e.g., "X-ray diffraction", "NMR")
[x] General descriptors (e.g., "High concentration", "Low efficiency")

Output Format:
Return only a Python list of valid chemical entities, with no explanations, markdown, or extra formatting.
"""

RELATION_EXTRACTION_TEMPLATE = """\
You are an expert in chemical text analysis. Your task is to extract only chemically meaningful relationships between a given set of entities from the provided text.

Guidelines for Relation Extraction:
1. Entity Matching: Consider only the entities provided in the given set. If an entity appears in the text but has no meaningful chemical relationship with another entity in the set, ignore it.
2. Chemically Significant Relations Only: Extract relations that describe actual chemical interactions, transformations, or properties (e.g., "reacts with," "catalyzes," "dissolves in," "produces").
3. Factual Relations: Only extract factual relations. Avoid observations, opinions, and findings.
4. Tuple Format: Output extracted facts in the form of (entity1, relation, entity2).
5. Avoid Generic Relations: Exclude weak relations like "is," "are," "exists," "relates to." Focus on specific interactions.

Valid Relation Types (Examples):
[v] "reacts with"
[v] "catalyzes"
[v] "binds to"
[v] "dissolves in"
[v] "oxidizes"
[v] "inhibits"
[v] "precipitates with"
[v] "acts as a solvent for"
[v] "is synthesized from"

Avoid These Weak Relations:
Exclude relations such as "is," "are," "has," "exists."

Entities Provided:
{entities}

Text:
{text}

Extract at most {max_facts} factual statements.

Output Format:
Provide the output as a Python list of tuples, containing only the extracted relationships without any code formatting, backticks, or markdown.

Example Output:
[
  ("HCl", "dissolves in", "Water"),
  ("HCl", "reacts with", "Sodium hydroxide")
]
"""

ONEHOP_GENERATION_TEMPLATE = """\
You are given a text along with an entity and its relation to another entity.

Entity 1: {entity1}
Relation: {relation}
Entity 2: {entity2}
Text: {text}

Information about Entity1: {entity1_meta}

Your task is to generate a factual question whose answer is Entity1.
The question should ask for the entity that has the specified relation to Entity2.
Do not mention the answer (which is Entity1) in the question.
Ensure that the question is factual and can be answered solely based on the given text and the information about Entity1.
Do not refer to sections such as "Abstract," "Table #1," "in the text," or "in the article."

If Entity1 and relation are not specific enough (i.e., multiple answers are possible), add descriptions from the text or from the information about Entity1 to make it specific so that Entity1 is the only answer.

Return a dictionary without any code formatting, backticks, or markdown, with keys "q" and "a".
"""

MULTIHOP_AGGREGATION_TEMPLATE = """\
You are given multiple factual questions and their answers that are logically connected.
Your task is to chain them into a single, coherent multi-hop question that requires multiple reasoning steps.
Ensure that the (only) answer is the answer to the first question, and the question naturally follows from the facts given.
You have to start from the last generated question and build up a single multi-hop question so it aggregates them all and the answer is the answer to the first question.
None of the answers to any of the questions should be in the generated question.

Here is an example:
Example:
Q1: What is oxidized to form Carbon Dioxide?
A1: Methane
Q2: What is used in Photosynthesis?
A2: Carbon Dioxide
Q3: What produces Oxygen?
A3: Photosynthesis

Multi-hop question:
Q: What is oxidized to produce a substance that is used in a process that results in Oxygen?
A: Methane

Here are the generated questions and answers:
{formatted_qas}

Return a Python dictionary without any code formatting, backticks, or markdown, with keys "q" (multi-hop question) and "a" (final answer).
"""

ONEHOP_VERIFICATION_TEMPLATE = """\
You are a chemistry expert. Your task is to determine if the given question is a factual chemistry question, unambiguous (has only one answer), and answerable based on the provided context. A factual question must be based on actual chemical properties, reactions, or experimentally verified principles and must be strictly related to chemistry. An answerable question should be solvable based on the given context and must not be open-ended or have multiple correct answers. MAKE SURE THE QUESTION HAS ONLY ONE CORRECT ANSWER. There shouldn't be any other entity except for the given answer that could be another answer.

### Question:
{question}

### Answer:
{answer}

### Context:
{context}

Please analyze the context and verify if the question is factual, unambiguous, and answerable. If the question is factual, has only one correct answer, is strictly related to chemistry, and can be answered based on the context, return "yes." Otherwise, return "no."

### Examples of Factual Chemistry Questions:
[v] "What dissolves in water and evaporates at 0 C?"
[v] "What catalyst is used in the reaction between A and B?"

### Examples of Non-Factual or Ambiguous Chemistry Questions:
[x] "What is the song of Nirvana that is a chemical entity?"
[x] "What chemical entity and structural unit form the layered hydroxide structures with intercalated water ions used in battery materials and OER catalysis?" (M(OH)6 and alpha-Ni(OH)2 are valid answers)
[x] Questions that have multiple possible correct answers or are not strictly related to chemistry.
"""

PATH_VERIFICATION_TEMPLATE = """\
You are a chemistry expert. Your task is to determine if the given question is a factual chemistry question and answerable based on the provided path.

### Path Information:
{path_text}

### Question:
{question}

### Answer:
{answer}

Please analyze the path and verify if the question is a factual chemistry question and can be answered based on the given path. A factual question must be based on actual chemical properties, reactions, or experimentally verified principles. An answerable question should be solvable based on the given path. If the question is factual and answerable, return "yes". If it contains speculation, opinions, or lacks verifiable chemical grounding, or it is not solvable, return "no".

### Examples of Factual Chemistry Questions:
[v] "What dissolves in water?"
[v] "What catalyst is used in the reaction between A and B?"
[v] "Which compound undergoes oxidation in this reaction?"
[v] "What product is formed when sodium reacts with chlorine?"

### Examples of Non-Factual Chemistry Questions:
[x] "Why do some scientists think this reaction is inefficient?"
[x] "What is the best solvent for this reaction?"
[x] "Is this reaction useful in industry?"
[x] "Do you think this compound is a good catalyst?"

Provide only "yes" or "no" as your response.
"""

ANSWER_SYSTEM_TEXT = (
    "You are answering chemistry questions. Respond with a single JSON object "
    'of the form {"answer": "<short answer>"} and nothing else.'
)

JUDGE_SYSTEM_TEXT = "You are grading short answers. Reply with exactly one word: CORRECT or INCORRECT."

JUDGE_TEMPLATE = """\
Question: {question}
Gold answer: {gold}
Model answer: {prediction}

Is the model answer correct?
"""


def entity_verification(entities: Sequence[str], text: str) -> str:
    return ENTITY_VERIFICATION_TEMPLATE.format(entities=list(entities), text=text)


def relation_extraction(entities: Sequence[str], text: str, max_facts: int) -> str:
    return RELATION_EXTRACTION_TEMPLATE.format(entities=list(entities), text=text, max_facts=max_facts)


def onehop_generation(entity1: str, relation: str, entity2: str, text: str, entity1_meta: Optional[str]) -> str:
    return ONEHOP_GENERATION_TEMPLATE.format(
        entity1=entity1,
        relation=relation,
        entity2=entity2,
        text=text,
        entity1_meta=entity1_meta if entity1_meta else "None",
    )


def format_qas(qas: Sequence[tuple[str, str]]) -> str:
    """Q1/A1 ... Qn/An block, first pair first (its answer is the final answer)."""
    lines = []
    for i, (q, a) in enumerate(qas, start=1):
        lines.append(f"Q{i}: {q}")
        lines.append(f"A{i}: {a}")
    return "\n".join(lines)


def multihop_aggregation(qas: Sequence[tuple[str, str]]) -> str:
    return MULTIHOP_AGGREGATION_TEMPLATE.format(formatted_qas=format_qas(qas))


def onehop_verification(question: str, answer: str, context: str) -> str:
    return ONEHOP_VERIFICATION_TEMPLATE.format(question=question, answer=answer, context=context)


def path_verification(question: str, answer: str, path_text: str) -> str:
    return PATH_VERIFICATION_TEMPLATE.format(question=question, answer=answer, path_text=path_text)


def answer_user_text(question: str, context: Optional[str] = None) -> str:
    if context:
        return f"Context:\n{context}\n\nQuestion: {question}"
    return f"Question: {question}"


def judge_user_text(question: str, gold: str, prediction: str) -> str:
    return JUDGE_TEMPLATE.format(question=question, gold=gold, prediction=prediction)
