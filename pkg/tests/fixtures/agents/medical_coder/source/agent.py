"""Medical coding assistant: analyzer and validator sub-agents with an ICD-10 lookup tool."""
from agents import Agent, function_tool


@function_tool
def link_icd(term: str) -> str:
    """Map a clinical term to an ICD-10 code."""
    ...


analyzer = Agent(name="analyzer_agent", instructions="Extract diagnoses from the note.", tools=[link_icd])
validator = Agent(name="validator_agent", instructions="Check codes against the note.")
coder = Agent(name="medical_coder", handoffs=[analyzer, validator])
