"""
URL configuration for the pddplab project.

Only the admin is served; it exposes the read-only ledger of experiment runs.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
